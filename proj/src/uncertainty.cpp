#include "bnnfer/uncertainty.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <future>
#include <set>

#include <nlohmann/json.hpp>

#include "bnnfer/errors.hpp"
#include "bnnfer/model_io.hpp"
#include "bnnfer/rng.hpp"

namespace bnnfer::uncertainty {

std::string to_string(Method method) {
    switch (method) {
        case Method::deterministic: return "deterministic";
        case Method::mc_dropout: return "mc-dropout";
        case Method::mc_dropconnect: return "mc-dropconnect";
        case Method::deep_ensemble: return "ensemble";
    }
    return "deterministic";
}

Method parse_method(const std::string& text) {
    if (text == "deterministic") return Method::deterministic;
    if (text == "mc-dropout" || text == "mc_dropout") return Method::mc_dropout;
    if (text == "mc-dropconnect" || text == "mc_dropconnect") return Method::mc_dropconnect;
    if (text == "ensemble" || text == "deep_ensemble") return Method::deep_ensemble;
    throw ValidationError("unknown method '" + text + "'");
}

PredictiveSamples PredictiveSamples::from_samples(Method method, std::vector<ProbabilityVector> samples) {
    if (samples.empty()) throw ValidationError("predictive samples need T >= 1");
    const std::size_t k = samples.front().size();
    PredictiveSamples out;
    out.method = method;
    out.mean.assign(k, 0.0);
    // Running mean: identical samples reproduce the sample bit for bit.
    for (std::size_t t = 0; t < samples.size(); ++t) {
        const auto& s = samples[t];
        if (s.size() != k) throw DimensionError("sample lengths differ");
        const double weight = 1.0 / static_cast<double>(t + 1);
        for (std::size_t c = 0; c < k; ++c) out.mean[c] += (s[c] - out.mean[c]) * weight;
    }
    out.samples = std::move(samples);
    return out;
}

PredictiveSamples PredictiveSamples::prefix(std::size_t k) const {
    if (k == 0 || k > samples.size()) throw ValidationError("prefix length out of range");
    return from_samples(method, std::vector<ProbabilityVector>(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(k)));
}

ProbabilityVector predict_proba(const nn::ModelParams& params, std::span<const double> input,
                                const nn::StochasticMask* mask) {
    return nn::softmax(nn::forward(params, input, mask));
}

PredictiveSamples deterministic_predict(const nn::ModelParams& params, std::span<const double> input) {
    return PredictiveSamples::from_samples(Method::deterministic, {predict_proba(params, input)});
}

namespace {

PredictiveSamples mc_predict(Method method, nn::MaskTarget target, nn::DropMode expected,
                             const nn::ModelParams& params, const nn::ModelConfig& config,
                             std::span<const double> input, std::size_t passes, std::uint64_t seed) {
    if (passes == 0) throw ValidationError("number of stochastic passes must be >= 1");
    if (config.drop_mode != expected) {
        throw ValidationError("model was configured with drop mode '" + nn::to_string(config.drop_mode) +
                              "', expected '" + nn::to_string(expected) + "'");
    }
    params.check_shape(config);
    std::vector<ProbabilityVector> samples;
    samples.reserve(passes);
    for (std::size_t t = 0; t < passes; ++t) {
        const auto mask = nn::StochasticMask::draw(config, target, config.drop_rate, derive_seed(seed, t));
        samples.push_back(predict_proba(params, input, &mask));
    }
    return PredictiveSamples::from_samples(method, std::move(samples));
}

}  // namespace

PredictiveSamples mc_dropout_predict(const nn::ModelParams& params, const nn::ModelConfig& config,
                                     std::span<const double> input, std::size_t passes,
                                     std::uint64_t seed) {
    return mc_predict(Method::mc_dropout, nn::MaskTarget::activations, nn::DropMode::dropout, params,
                      config, input, passes, seed);
}

PredictiveSamples mc_dropconnect_predict(const nn::ModelParams& params,
                                         const nn::ModelConfig& config,
                                         std::span<const double> input, std::size_t passes,
                                         std::uint64_t seed) {
    return mc_predict(Method::mc_dropconnect, nn::MaskTarget::weights, nn::DropMode::dropconnect, params,
                      config, input, passes, seed);
}

Ensemble::Ensemble(nn::ModelConfig config, std::vector<nn::ModelParams> members,
                   std::vector<std::uint64_t> member_seeds)
    : config_(std::move(config)), members_(std::move(members)), seeds_(std::move(member_seeds)) {
    config_.validate();
    if (members_.empty()) throw ValidationError("an ensemble needs at least one member");
    if (seeds_.size() != members_.size()) throw ValidationError("one seed per member required");
    if (std::set<std::uint64_t>(seeds_.begin(), seeds_.end()).size() != seeds_.size()) {
        throw ValidationError("ensemble member seeds must be pairwise distinct");
    }
    for (const auto& m : members_) m.check_shape(config_);
}

Ensemble train_ensemble_with_seeds(const nn::ModelConfig& config,
                                   std::span<const nn::Example> examples,
                                   std::span<const std::uint64_t> seeds,
                                   const nn::TrainingSettings& settings, std::size_t threads) {
    config.validate();
    if (seeds.empty()) throw ValidationError("an ensemble needs at least one member");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ValidationError("ensemble member seeds must be pairwise distinct");
    }

    auto train_member = [&](std::size_t i) {
        nn::ModelConfig member = config;
        member.seed = seeds[i];
        try {
            return nn::train(member, examples, settings).params;
        } catch (const TrainingError& e) {
            throw TrainingError("ensemble member " + std::to_string(i) + ": " + e.what());
        }
    };

    std::vector<nn::ModelParams> members(seeds.size());
    const std::size_t workers = std::max<std::size_t>(1, threads);
    for (std::size_t start = 0; start < seeds.size(); start += workers) {
        const std::size_t end = std::min(seeds.size(), start + workers);
        if (workers == 1) {
            members[start] = train_member(start);
            continue;
        }
        std::vector<std::future<nn::ModelParams>> pending;
        for (std::size_t i = start; i < end; ++i) pending.push_back(std::async(std::launch::async, train_member, i));
        for (std::size_t i = start; i < end; ++i) members[i] = pending[i - start].get();
    }

    nn::ModelConfig shared = config;
    shared.seed = seeds.front();
    return Ensemble(shared, std::move(members), std::vector<std::uint64_t>(seeds.begin(), seeds.end()));
}

Ensemble train_ensemble(const nn::ModelConfig& config, std::span<const nn::Example> examples,
                        std::size_t members, const nn::TrainingSettings& settings, std::size_t threads) {
    if (members == 0) throw ValidationError("an ensemble needs at least one member");
    std::vector<std::uint64_t> seeds(members);
    for (std::size_t i = 0; i < members; ++i) seeds[i] = config.seed + i;
    return train_ensemble_with_seeds(config, examples, seeds, settings, threads);
}

PredictiveSamples ensemble_predict(const Ensemble& ensemble, std::span<const double> input) {
    std::vector<ProbabilityVector> samples;
    samples.reserve(ensemble.size());
    for (const auto& member : ensemble.members()) samples.push_back(predict_proba(member, input));
    return PredictiveSamples::from_samples(Method::deep_ensemble, std::move(samples));
}

void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::json members = nlohmann::json::array();
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "member_%03zu.json", i);
        nn::ModelConfig config = ensemble.config();
        config.seed = ensemble.member_seeds()[i];
        nn::save_model(dir / name, {config, ensemble.members()[i]});
        members.push_back({{"file", name}, {"seed", ensemble.member_seeds()[i]}});
    }
    const nlohmann::json manifest{{"N", ensemble.size()},
                                  {"base_seed", ensemble.base_seed()},
                                  {"config", nn::config_to_json(ensemble.config())},
                                  {"members", std::move(members)}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << manifest.dump(1) << '\n';
}

Ensemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw IoError("no manifest.json in " + dir.string());
    try {
        const auto manifest = nlohmann::json::parse(in);
        const auto config = nn::config_from_json(manifest.at("config"));
        const auto n = manifest.at("N").get<std::size_t>();
        const auto& entries = manifest.at("members");
        if (entries.size() != n) throw FormatError("manifest N does not match the member list");
        std::vector<nn::ModelParams> members;
        std::vector<std::uint64_t> seeds;
        for (const auto& entry : entries) {
            auto model = nn::load_model(dir / entry.at("file").get<std::string>());
            nn::ModelConfig expected = config;
            expected.seed = model.config.seed;
            if (!(model.config == expected)) throw FormatError("member config differs from the manifest");
            seeds.push_back(entry.at("seed").get<std::uint64_t>());
            members.push_back(std::move(model.params));
        }
        return Ensemble(config, std::move(members), std::move(seeds));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + "/manifest.json: " + e.what());
    }
}

}  // namespace bnnfer::uncertainty
