#pragma once

// Approximate Bayesian predictors: MC-Dropout, MC-DropConnect and Deep
// Ensembles. Each produces T probability vectors per input plus their
// unweighted arithmetic mean.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bnnfer/nn.hpp"
#include "bnnfer/types.hpp"

namespace bnnfer::uncertainty {

enum class Method { deterministic, mc_dropout, mc_dropconnect, deep_ensemble };

// CLI spellings: deterministic, mc-dropout, mc-dropconnect, ensemble
std::string to_string(Method method);
Method parse_method(const std::string& text);

struct PredictiveSamples {
    Method method = Method::deterministic;
    std::vector<ProbabilityVector> samples;  // draw or member order
    ProbabilityVector mean;

    static PredictiveSamples from_samples(Method method, std::vector<ProbabilityVector> samples);

    std::size_t size() const { return samples.size(); }

    // The first k samples with their own mean.
    PredictiveSamples prefix(std::size_t k) const;
};

// softmax(forward(params, input, mask))
ProbabilityVector predict_proba(const nn::ModelParams& params, std::span<const double> input,
                                const nn::StochasticMask* mask = nullptr);

PredictiveSamples deterministic_predict(const nn::ModelParams& params, std::span<const double> input);

// Pass t draws its mask from derive_seed(seed, t), so the first k passes do
// not depend on T.
PredictiveSamples mc_dropout_predict(const nn::ModelParams& params, const nn::ModelConfig& config,
                                     std::span<const double> input, std::size_t passes,
                                     std::uint64_t seed);

PredictiveSamples mc_dropconnect_predict(const nn::ModelParams& params,
                                         const nn::ModelConfig& config,
                                         std::span<const double> input, std::size_t passes,
                                         std::uint64_t seed);

class Ensemble {
public:
    // Rejects empty member lists, shape mismatches and repeated seeds.
    Ensemble(nn::ModelConfig config, std::vector<nn::ModelParams> members,
             std::vector<std::uint64_t> member_seeds);

    const nn::ModelConfig& config() const { return config_; }
    const std::vector<nn::ModelParams>& members() const { return members_; }
    const std::vector<std::uint64_t>& member_seeds() const { return seeds_; }
    std::size_t size() const { return members_.size(); }
    std::uint64_t base_seed() const { return config_.seed; }

    bool operator==(const Ensemble&) const = default;

private:
    nn::ModelConfig config_;
    std::vector<nn::ModelParams> members_;
    std::vector<std::uint64_t> seeds_;
};

// Member i is trained with seed config.seed + i; members are otherwise
// identical. Up to `threads` members train concurrently; the result is
// ordered by member index.
Ensemble train_ensemble(const nn::ModelConfig& config, std::span<const nn::Example> examples,
                        std::size_t members, const nn::TrainingSettings& settings,
                        std::size_t threads = 1);

// Trains one member per given seed. Repeated seeds are rejected before any
// training starts.
Ensemble train_ensemble_with_seeds(const nn::ModelConfig& config,
                                   std::span<const nn::Example> examples,
                                   std::span<const std::uint64_t> seeds,
                                   const nn::TrainingSettings& settings, std::size_t threads = 1);

// One mask-free prediction per member, in member order.
PredictiveSamples ensemble_predict(const Ensemble& ensemble, std::span<const double> input);

// Directory of member_NNN.json model files plus manifest.json
// {N, base_seed, config, members: [{file, seed}]}.
void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble);
Ensemble load_ensemble(const std::filesystem::path& dir);

}  // namespace bnnfer::uncertainty
