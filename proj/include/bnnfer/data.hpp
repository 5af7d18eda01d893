#pragma once

// Datasets with crowd-vote label distributions: the canonical FER+ CSV
// format, and a synthetic generator with controllable label ambiguity.
//
// Canonical CSV (UTF-8, comma separated, LF or CRLF line endings):
//
//   usage,pixels,neutral,happiness,surprise,sadness,anger,disgust,fear,contempt,unknown,NF
//   Training,0 12 255 ...,2,8,0,0,0,0,0,0,0,0
//
// usage is one of Training / PublicTest / PrivateTest, pixels is a
// space-separated list of integers in [0, 255] whose length is a perfect
// square, and the remaining ten columns are non-negative vote counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnnfer/nn.hpp"
#include "bnnfer/types.hpp"

namespace bnnfer::data {

inline constexpr std::size_t kEmotionClasses = 8;

inline constexpr std::array<std::string_view, kEmotionClasses> kClassNames = {
    "neutral", "happiness", "surprise", "sadness", "anger", "disgust", "fear", "contempt"};

inline constexpr std::string_view kCanonicalHeader =
    "usage,pixels,neutral,happiness,surprise,sadness,anger,disgust,fear,contempt,unknown,NF";

enum class Usage { train, validation, test };

std::string to_string(Usage usage);

struct LabelDistribution {
    std::vector<std::uint32_t> votes;
    ProbabilityVector probabilities;

    // Throws ValidationError when every count is zero.
    static LabelDistribution from_votes(std::vector<std::uint32_t> votes);

    bool operator==(const LabelDistribution&) const = default;
};

// argmax with lowest-index tie-break.
std::size_t derive_hard_label(const LabelDistribution& dist);

struct LabeledSample {
    std::size_t id = 0;
    std::vector<double> features;
    LabelDistribution label_dist;
    std::size_t hard_label = 0;
    Usage usage = Usage::train;

    bool operator==(const LabeledSample&) const = default;
};

class Dataset {
public:
    Dataset() = default;

    // Validates: unique ids, equal square feature lengths, label
    // distributions of length num_classes, hard labels consistent.
    Dataset(std::vector<LabeledSample> samples, std::size_t num_classes);

    const std::vector<LabeledSample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t feature_dim() const { return samples_.empty() ? 0 : samples_.front().features.size(); }

    // Rows dropped by the loader because no emotion vote survived.
    std::size_t skipped_rows() const { return skipped_rows_; }
    void set_skipped_rows(std::size_t n) { skipped_rows_ = n; }

    std::vector<const LabeledSample*> split(Usage usage) const;

    bool operator==(const Dataset& other) const {
        return num_classes_ == other.num_classes_ && samples_ == other.samples_;
    }

private:
    std::vector<LabeledSample> samples_;
    std::size_t num_classes_ = kEmotionClasses;
    std::size_t skipped_rows_ = 0;
};

Dataset load_ferplus_csv(const std::filesystem::path& path);
Dataset parse_ferplus_csv(std::istream& in);

// Writes the canonical format; requires an 8-class dataset. Features are
// written as round(255 * x).
void write_ferplus_csv(const Dataset& dataset, std::ostream& out);
void save_ferplus_csv(const Dataset& dataset, const std::filesystem::path& path);

struct SynthParams {
    std::size_t num_samples = 2000;
    std::size_t num_classes = kEmotionClasses;
    std::size_t input_dim = 16;
    double flip_rate = 0.3;
    double separation = 2.0;
    std::uint64_t seed = 0;
};

// Class-conditional Gaussian blobs with unit variance around means
// separation * e_k (vertices of a simplex in the first num_classes
// coordinates), mapped to pixels by clamp(0.5 + x / 8) and quantized to
// multiples of 1/255. Class labels are drawn uniformly. With probability
// flip_rate the recorded votes are 6 for the true class and 4 for a
// confuser drawn uniformly from the other classes; otherwise 10 votes go to
// the true class. The first 70% of samples are train, the next 10%
// validation, the rest test.
//
// Requires input_dim >= num_classes and input_dim a perfect square.
Dataset synth_aleatoric(const SynthParams& params);

struct LabelEntropyReport {
    std::vector<double> entropies;  // per sample, dataset order
    double mean = 0.0;
    double max = 0.0;
    std::vector<double> histogram_edges;  // bins over [0, ln K]
    std::vector<std::size_t> histogram_counts;
};

LabelEntropyReport label_entropy_report(const Dataset& dataset, std::size_t histogram_bins = 10);

// Views over a set of samples for nn::train.
std::vector<nn::Example> to_examples(std::span<const LabeledSample* const> samples);

}  // namespace bnnfer::data
