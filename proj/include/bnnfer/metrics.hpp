#pragma once

// Evaluation battery for probabilistic classifiers. All functions are pure.
//
// Conventions: natural logs everywhere, probabilities clamped at 1e-12 inside
// logs, argmax ties go to the lowest class index, confidence is the largest
// entry of the (mean) probability vector.

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "bnnfer/types.hpp"

namespace bnnfer::metrics {

inline constexpr std::size_t kDefaultBins = 15;

double classification_error(std::span<const ProbabilityVector> predictions,
                            std::span<const std::size_t> hard_labels);

double nll(std::span<const ProbabilityVector> predictions,
           std::span<const std::size_t> hard_labels);

struct CalibrationBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double confidence = 0.0;  // mean confidence, meaningful only when count > 0
    double accuracy = 0.0;    // empirical accuracy, meaningful only when count > 0

    bool empty() const { return count == 0; }
};

struct CalibrationBins {
    std::vector<CalibrationBin> bins;
    std::size_t total = 0;
};

struct EceResult {
    double ece = 0.0;
    CalibrationBins bins;
};

// Lower edge of bin m out of M; bin m covers [edge(m), edge(m+1)) and the top
// bin is closed at 1.
double bin_edge(std::size_t m, std::size_t bin_count);

// Bin index for a confidence in [0, 1]. A value equal to an interior edge
// lands in the higher bin.
std::size_t bin_index(double confidence, std::size_t bin_count);

EceResult ece(std::span<const ProbabilityVector> predictions,
              std::span<const std::size_t> hard_labels, std::size_t bin_count = kDefaultBins);

struct ReliabilityPoint {
    double confidence = 0.0;
    double accuracy = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

// One point per non-empty bin, in bin order.
std::vector<ReliabilityPoint> reliability_curve(const CalibrationBins& bins);

// Shannon entropy in nats, 0 ln 0 = 0. Rejects vectors off the simplex by
// more than 1e-6.
double predictive_entropy(std::span<const double> p);

struct RankedSample {
    std::size_t id = 0;
    double entropy = 0.0;
    ProbabilityVector mean;
    std::size_t predicted = 0;
    ProbabilityVector labels;
};

using UncertaintyRanking = std::vector<RankedSample>;

// Top-k samples by descending entropy of the mean prediction; ties by
// ascending id. k == 0 yields an empty ranking; k > size is rejected.
// label_distributions may be empty, in which case RankedSample::labels stays
// empty.
UncertaintyRanking rank_by_entropy(std::span<const ProbabilityVector> means,
                                   std::span<const std::size_t> ids,
                                   std::span<const ProbabilityVector> label_distributions,
                                   std::size_t k);

// KL(labels || prediction) in nats.
double soft_label_divergence(std::span<const double> prediction, std::span<const double> labels);

struct MetricsReport {
    double classification_error = 0.0;
    double nll = 0.0;
    double ece = 0.0;
    double mean_entropy = 0.0;
    CalibrationBins bins;
};

MetricsReport evaluate(std::span<const ProbabilityVector> predictions,
                       std::span<const std::size_t> hard_labels,
                       std::size_t bin_count = kDefaultBins);

// {error, nll, ece, mean_entropy, bins: [{lo, hi, count, conf, acc}]}
// Empty bins carry null conf/acc.
nlohmann::json to_json(const MetricsReport& report);

}  // namespace bnnfer::metrics
