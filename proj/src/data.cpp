#include "bnnfer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <unordered_set>

#include "bnnfer/errors.hpp"
#include "bnnfer/metrics.hpp"
#include "bnnfer/rng.hpp"

namespace bnnfer::data {

namespace {

bool is_perfect_square(std::size_t n) {
    const auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return root * root == n;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_uint(std::string_view text, T& out) {
    text = trim(text);
    if (text.empty()) return false;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

Usage parse_usage(std::string_view text, std::size_t line) {
    text = trim(text);
    if (text == "Training") return Usage::train;
    if (text == "PublicTest") return Usage::validation;
    if (text == "PrivateTest") return Usage::test;
    throw ParseError(line, "unknown usage '" + std::string(text) + "'");
}

std::string_view canonical_usage(Usage usage) {
    switch (usage) {
        case Usage::train: return "Training";
        case Usage::validation: return "PublicTest";
        case Usage::test: return "PrivateTest";
    }
    return "Training";
}

}  // namespace

std::string to_string(Usage usage) {
    switch (usage) {
        case Usage::train: return "train";
        case Usage::validation: return "validation";
        case Usage::test: return "test";
    }
    return "train";
}

LabelDistribution LabelDistribution::from_votes(std::vector<std::uint32_t> votes) {
    std::uint64_t total = 0;
    for (auto v : votes) total += v;
    if (total == 0) throw ValidationError("label distribution has no votes");
    LabelDistribution dist;
    dist.probabilities.reserve(votes.size());
    for (auto v : votes) dist.probabilities.push_back(static_cast<double>(v) / static_cast<double>(total));
    dist.votes = std::move(votes);
    return dist;
}

std::size_t derive_hard_label(const LabelDistribution& dist) {
    return argmax(dist.probabilities);
}

Dataset::Dataset(std::vector<LabeledSample> samples, std::size_t num_classes)
    : samples_(std::move(samples)), num_classes_(num_classes) {
    if (num_classes_ < 2) throw ValidationError("a dataset needs at least two classes");
    std::unordered_set<std::size_t> ids;
    const std::size_t dim = feature_dim();
    if (!samples_.empty() && !is_perfect_square(dim)) {
        throw ValidationError("feature length " + std::to_string(dim) + " is not a perfect square");
    }
    for (const auto& s : samples_) {
        if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id " + std::to_string(s.id));
        if (s.features.size() != dim) throw DimensionError("feature lengths differ within the dataset");
        if (s.label_dist.probabilities.size() != num_classes_ || s.label_dist.votes.size() != num_classes_) {
            throw DimensionError("label distribution length differs from the class count");
        }
        if (s.hard_label != derive_hard_label(s.label_dist)) {
            throw ValidationError("hard label of sample " + std::to_string(s.id) +
                                  " is not the argmax of its distribution");
        }
    }
}

std::vector<const LabeledSample*> Dataset::split(Usage usage) const {
    std::vector<const LabeledSample*> out;
    for (const auto& s : samples_) {
        if (s.usage == usage) out.push_back(&s);
    }
    return out;
}

Dataset parse_ferplus_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
    };

    if (!next_line()) throw FormatError("missing header");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line != kCanonicalHeader) {
        throw FormatError("missing or unexpected header; expected '" + std::string(kCanonicalHeader) + "'");
    }

    std::vector<LabeledSample> samples;
    std::size_t skipped = 0;
    std::size_t feature_dim = 0;
    while (next_line()) {
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 12) {
            throw ParseError(line_no, "expected 12 fields, found " + std::to_string(fields.size()));
        }
        const Usage usage = parse_usage(fields[0], line_no);

        std::vector<double> features;
        std::string_view pixels = trim(fields[1]);
        while (!pixels.empty()) {
            const std::size_t space = pixels.find(' ');
            const std::string_view token = pixels.substr(0, space);
            unsigned value = 0;
            if (!token.empty()) {
                if (!parse_uint(token, value) || value > 255) {
                    throw ParseError(line_no, "invalid pixel value '" + std::string(token) + "'");
                }
                features.push_back(static_cast<double>(value) / 255.0);
            }
            if (space == std::string_view::npos) break;
            pixels.remove_prefix(space + 1);
        }
        if (features.empty()) throw ParseError(line_no, "empty pixel list");
        if (!is_perfect_square(features.size())) {
            throw ValidationError("line " + std::to_string(line_no) + ": pixel count " +
                                  std::to_string(features.size()) + " is not a perfect square");
        }
        if (feature_dim == 0) feature_dim = features.size();
        if (features.size() != feature_dim) {
            throw ValidationError("line " + std::to_string(line_no) + ": image size differs from earlier rows");
        }

        std::vector<std::uint32_t> votes(kEmotionClasses);
        for (std::size_t c = 0; c < 10; ++c) {
            std::uint32_t v = 0;
            if (!parse_uint(fields[2 + c], v)) {
                throw ParseError(line_no, "invalid vote count '" + std::string(fields[2 + c]) + "'");
            }
            if (c < kEmotionClasses) votes[c] = v;  // unknown and NF are dropped
        }
        if (std::all_of(votes.begin(), votes.end(), [](auto v) { return v == 0; })) {
            ++skipped;
            continue;
        }

        LabeledSample sample;
        sample.id = samples.size();
        sample.features = std::move(features);
        sample.label_dist = LabelDistribution::from_votes(std::move(votes));
        sample.hard_label = derive_hard_label(sample.label_dist);
        sample.usage = usage;
        samples.push_back(std::move(sample));
    }
    if (in.bad()) throw IoError("read failure after line " + std::to_string(line_no));

    Dataset dataset(std::move(samples), kEmotionClasses);
    dataset.set_skipped_rows(skipped);
    return dataset;
}

Dataset load_ferplus_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_ferplus_csv(in);
}

void write_ferplus_csv(const Dataset& dataset, std::ostream& out) {
    if (dataset.num_classes() != kEmotionClasses) {
        throw ValidationError("the canonical CSV format holds exactly 8 emotion classes");
    }
    out << kCanonicalHeader << '\n';
    for (const auto& s : dataset.samples()) {
        out << canonical_usage(s.usage) << ',';
        for (std::size_t i = 0; i < s.features.size(); ++i) {
            const double x = std::clamp(s.features[i], 0.0, 1.0);
            if (i) out << ' ';
            out << static_cast<int>(std::lround(x * 255.0));
        }
        for (auto v : s.label_dist.votes) out << ',' << v;
        out << ",0,0\n";
    }
}

void save_ferplus_csv(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_ferplus_csv(dataset, out);
    if (!out) throw IoError("failed writing " + path.string());
}

Dataset synth_aleatoric(const SynthParams& params) {
    if (params.num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (!(params.flip_rate >= 0.0 && params.flip_rate < 1.0)) {
        throw ValidationError("flip_rate must lie in [0, 1)");
    }
    if (params.num_samples == 0) throw ValidationError("num_samples must be positive");
    if (params.input_dim < params.num_classes) {
        throw ValidationError("input_dim must be at least num_classes");
    }
    if (!is_perfect_square(params.input_dim)) {
        throw ValidationError("input_dim must be a perfect square");
    }
    if (!std::isfinite(params.separation)) throw ValidationError("separation must be finite");

    Rng rng = make_rng(params.seed, Stream::data);
    std::uniform_int_distribution<std::size_t> pick_class(0, params.num_classes - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, params.num_classes - 2);
    std::bernoulli_distribution flip(params.flip_rate);
    std::normal_distribution<double> noise(0.0, 1.0);

    const std::size_t train_end = params.num_samples * 7 / 10;
    const std::size_t validation_end = params.num_samples * 8 / 10;

    std::vector<LabeledSample> samples;
    samples.reserve(params.num_samples);
    for (std::size_t i = 0; i < params.num_samples; ++i) {
        const std::size_t label = pick_class(rng);
        LabeledSample s;
        s.id = i;
        s.features.resize(params.input_dim);
        for (std::size_t d = 0; d < params.input_dim; ++d) {
            const double x = (d == label ? params.separation : 0.0) + noise(rng);
            const double pixel = std::clamp(0.5 + x / 8.0, 0.0, 1.0);
            s.features[d] = static_cast<double>(std::lround(pixel * 255.0)) / 255.0;
        }
        std::vector<std::uint32_t> votes(params.num_classes, 0);
        if (flip(rng)) {
            std::size_t confuser = pick_other(rng);
            if (confuser >= label) ++confuser;
            votes[label] = 6;
            votes[confuser] = 4;
        } else {
            votes[label] = 10;
        }
        s.label_dist = LabelDistribution::from_votes(std::move(votes));
        s.hard_label = derive_hard_label(s.label_dist);
        s.usage = i < train_end ? Usage::train : i < validation_end ? Usage::validation : Usage::test;
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples), params.num_classes);
}

LabelEntropyReport label_entropy_report(const Dataset& dataset, std::size_t histogram_bins) {
    if (histogram_bins == 0) throw ValidationError("histogram needs at least one bin");
    LabelEntropyReport report;
    const double top = std::log(static_cast<double>(dataset.num_classes()));
    for (std::size_t b = 0; b <= histogram_bins; ++b) {
        report.histogram_edges.push_back(top * static_cast<double>(b) / static_cast<double>(histogram_bins));
    }
    report.histogram_counts.assign(histogram_bins, 0);
    for (const auto& s : dataset.samples()) {
        const double h = metrics::predictive_entropy(s.label_dist.probabilities);
        report.entropies.push_back(h);
        report.max = std::max(report.max, h);
        auto bin = static_cast<std::size_t>(h / top * static_cast<double>(histogram_bins));
        ++report.histogram_counts[std::min(bin, histogram_bins - 1)];
    }
    if (!report.entropies.empty()) {
        double sum = 0.0;
        for (double h : report.entropies) sum += h;
        report.mean = sum / static_cast<double>(report.entropies.size());
    }
    return report;
}

std::vector<nn::Example> to_examples(std::span<const LabeledSample* const> samples) {
    std::vector<nn::Example> out;
    out.reserve(samples.size());
    for (const auto* s : samples) out.push_back({s->features, s->hard_label});
    return out;
}

}  // namespace bnnfer::data
