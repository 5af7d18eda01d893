#include "bnnfer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bnnfer/errors.hpp"

namespace bnnfer::metrics {

namespace {

constexpr double kFloor = 1e-12;
constexpr double kSimplexTolerance = 1e-6;

void check_inputs(std::span<const ProbabilityVector> predictions,
                  std::span<const std::size_t> hard_labels) {
    if (predictions.empty()) throw ValidationError("no predictions to evaluate");
    if (predictions.size() != hard_labels.size()) {
        throw DimensionError("prediction and label counts differ");
    }
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (hard_labels[i] >= predictions[i].size()) {
            throw ValidationError("label out of range at sample " + std::to_string(i));
        }
    }
}

}  // namespace

double classification_error(std::span<const ProbabilityVector> predictions,
                            std::span<const std::size_t> hard_labels) {
    check_inputs(predictions, hard_labels);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (argmax(predictions[i]) != hard_labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

double nll(std::span<const ProbabilityVector> predictions,
           std::span<const std::size_t> hard_labels) {
    check_inputs(predictions, hard_labels);
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        sum += -std::log(std::max(predictions[i][hard_labels[i]], kFloor));
    }
    return sum / static_cast<double>(predictions.size());
}

double bin_edge(std::size_t m, std::size_t bin_count) {
    return static_cast<double>(m) / static_cast<double>(bin_count);
}

std::size_t bin_index(double confidence, std::size_t bin_count) {
    if (bin_count == 0) throw ValidationError("bin count must be >= 1");
    const double scaled = std::floor(confidence * static_cast<double>(bin_count));
    std::size_t m = scaled <= 0.0 ? 0 : std::min(static_cast<std::size_t>(scaled), bin_count - 1);
    // Settle rounding in confidence * M against the stored edges.
    while (m + 1 < bin_count && confidence >= bin_edge(m + 1, bin_count)) ++m;
    while (m > 0 && confidence < bin_edge(m, bin_count)) --m;
    return m;
}

EceResult ece(std::span<const ProbabilityVector> predictions,
              std::span<const std::size_t> hard_labels, std::size_t bin_count) {
    if (bin_count == 0) throw ValidationError("bin count must be >= 1");
    check_inputs(predictions, hard_labels);

    // Extended-precision sums, rounded once at the end.
    std::vector<long double> conf_sum(bin_count, 0.0L);
    std::vector<long double> correct(bin_count, 0.0L);
    EceResult result;
    result.bins.total = predictions.size();
    result.bins.bins.resize(bin_count);
    for (std::size_t m = 0; m < bin_count; ++m) {
        result.bins.bins[m].lo = bin_edge(m, bin_count);
        result.bins.bins[m].hi = bin_edge(m + 1, bin_count);
    }

    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const std::size_t predicted = argmax(predictions[i]);
        const double confidence = predictions[i][predicted];
        const std::size_t m = bin_index(confidence, bin_count);
        ++result.bins.bins[m].count;
        conf_sum[m] += confidence;
        if (predicted == hard_labels[i]) correct[m] += 1.0L;
    }

    long double gap = 0.0L;
    for (std::size_t m = 0; m < bin_count; ++m) {
        auto& bin = result.bins.bins[m];
        if (bin.empty()) continue;
        const auto count = static_cast<long double>(bin.count);
        bin.confidence = static_cast<double>(conf_sum[m] / count);
        bin.accuracy = static_cast<double>(correct[m] / count);
        gap += std::abs(correct[m] - conf_sum[m]);
    }
    result.ece = static_cast<double>(gap / static_cast<long double>(predictions.size()));
    return result;
}

std::vector<ReliabilityPoint> reliability_curve(const CalibrationBins& bins) {
    std::vector<ReliabilityPoint> points;
    for (const auto& bin : bins.bins) {
        if (bin.empty()) continue;
        points.push_back({bin.confidence, bin.accuracy, bin.lo, bin.hi, bin.count});
    }
    return points;
}

double predictive_entropy(std::span<const double> p) {
    check_simplex(p, kSimplexTolerance, "predictive_entropy");
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return std::max(h, 0.0);
}

UncertaintyRanking rank_by_entropy(std::span<const ProbabilityVector> means,
                                   std::span<const std::size_t> ids,
                                   std::span<const ProbabilityVector> label_distributions,
                                   std::size_t k) {
    if (means.size() != ids.size()) throw DimensionError("mean and id counts differ");
    if (!label_distributions.empty() && label_distributions.size() != means.size()) {
        throw DimensionError("label distribution count differs from prediction count");
    }
    if (k > means.size()) throw ValidationError("k exceeds the number of samples");
    if (k == 0) return {};

    std::vector<double> entropy(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) entropy[i] = predictive_entropy(means[i]);

    std::vector<std::size_t> order(means.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        if (entropy[a] != entropy[b]) return entropy[a] > entropy[b];
        return ids[a] < ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

    UncertaintyRanking ranking;
    ranking.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = order[r];
        RankedSample s;
        s.id = ids[i];
        s.entropy = entropy[i];
        s.mean = means[i];
        s.predicted = argmax(means[i]);
        if (!label_distributions.empty()) s.labels = label_distributions[i];
        ranking.push_back(std::move(s));
    }
    return ranking;
}

double soft_label_divergence(std::span<const double> prediction, std::span<const double> labels) {
    if (prediction.size() != labels.size()) throw DimensionError("distribution lengths differ");
    check_simplex(prediction, kSimplexTolerance, "soft_label_divergence prediction");
    check_simplex(labels, kSimplexTolerance, "soft_label_divergence labels");
    double kl = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 0.0) kl += labels[i] * std::log(labels[i] / std::max(prediction[i], kFloor));
    }
    return std::max(kl, 0.0);
}

MetricsReport evaluate(std::span<const ProbabilityVector> predictions,
                       std::span<const std::size_t> hard_labels, std::size_t bin_count) {
    MetricsReport report;
    report.classification_error = classification_error(predictions, hard_labels);
    report.nll = nll(predictions, hard_labels);
    auto calibration = ece(predictions, hard_labels, bin_count);
    report.ece = calibration.ece;
    report.bins = std::move(calibration.bins);
    double entropy_sum = 0.0;
    for (const auto& p : predictions) entropy_sum += predictive_entropy(p);
    report.mean_entropy = entropy_sum / static_cast<double>(predictions.size());
    return report;
}

nlohmann::json to_json(const MetricsReport& report) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& bin : report.bins.bins) {
        nlohmann::json item{{"lo", bin.lo}, {"hi", bin.hi}, {"count", bin.count}};
        item["conf"] = bin.empty() ? nlohmann::json(nullptr) : nlohmann::json(bin.confidence);
        item["acc"] = bin.empty() ? nlohmann::json(nullptr) : nlohmann::json(bin.accuracy);
        bins.push_back(std::move(item));
    }
    return {{"error", report.classification_error},
            {"nll", report.nll},
            {"ece", report.ece},
            {"mean_entropy", report.mean_entropy},
            {"bins", std::move(bins)}};
}

}  // namespace bnnfer::metrics
