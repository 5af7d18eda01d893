#pragma once

// Shared generators and oracles for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "bnnfer/metrics.hpp"
#include "bnnfer/nn.hpp"

namespace testutil {

using bnnfer::ProbabilityVector;
using bnnfer::nn::ModelConfig;
using bnnfer::nn::ModelParams;

// Up to three weight layers, every width at most 16.
inline ModelConfig random_config(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> width(1, 16);
    std::uniform_int_distribution<std::size_t> classes(2, 16);
    std::uniform_int_distribution<std::size_t> hidden_layers(0, 2);
    ModelConfig c;
    c.input_dim = width(rng);
    const std::size_t h = hidden_layers(rng);
    for (std::size_t i = 0; i < h; ++i) c.hidden_dims.push_back(width(rng));
    c.num_classes = classes(rng);
    return c;
}

inline ModelParams random_params(const ModelConfig& config, std::uint64_t seed) {
    auto params = ModelParams::zeros(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.7);
    for (auto& layer : params.layers) {
        for (double& w : layer.weights) w = n(rng);
        for (double& b : layer.biases) b = n(rng);
    }
    return params;
}

inline double loss_at(const ModelParams& params, const std::vector<double>& x, std::size_t label,
                      const bnnfer::nn::StochasticMask* mask) {
    namespace nn = bnnfer::nn;
    return nn::cross_entropy_loss(nn::softmax(nn::forward(params, x, mask)), label);
}

// Largest relative error between analytic gradients and central differences.
// The denominator has a floor of 1e-6 * max(1, |loss|). Central differences
// carry rounding noise near eps * |loss| / step, so partials far below that
// level (dead ReLUs, masked weights, saturated softmax) compare absolutely.
inline double max_fd_relative_error(const ModelParams& params, const ModelParams& grads,
                                    const std::vector<double>& x, std::size_t label,
                                    const bnnfer::nn::StochasticMask* mask, double step) {
    double worst = 0.0;
    ModelParams probe = params;
    const double floor = 1e-6 * std::max(1.0, std::abs(loss_at(params, x, label, mask)));
    auto check = [&](double& slot, double analytic) {
        const double saved = slot;
        slot = saved + step;
        const double up = loss_at(probe, x, label, mask);
        slot = saved - step;
        const double down = loss_at(probe, x, label, mask);
        slot = saved;
        const double numeric = (up - down) / (2 * step);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    };
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        for (std::size_t i = 0; i < probe.layers[l].weights.size(); ++i) {
            check(probe.layers[l].weights[i], grads.layers[l].weights[i]);
        }
        for (std::size_t i = 0; i < probe.layers[l].biases.size(); ++i) {
            check(probe.layers[l].biases[i], grads.layers[l].biases[i]);
        }
    }
    return worst;
}

// Uniform draw from the K-simplex (normalized exponentials), optionally
// sharpened so that confidences spread over (1/K, 1].
inline ProbabilityVector random_simplex(std::mt19937_64& rng, std::size_t k, double sharpness = 1.0) {
    std::exponential_distribution<double> e(1.0);
    ProbabilityVector p(k);
    double sum = 0.0;
    for (double& v : p) {
        v = std::pow(e(rng), sharpness);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

// Brute-force ECE: for every bin, scan every sample.
inline double brute_force_ece(const std::vector<ProbabilityVector>& preds,
                              const std::vector<std::size_t>& labels, std::size_t bins) {
    const double n = static_cast<double>(preds.size());
    double total = 0.0;
    for (std::size_t m = 0; m < bins; ++m) {
        const double lo = static_cast<double>(m) / static_cast<double>(bins);
        const double hi = static_cast<double>(m + 1) / static_cast<double>(bins);
        double conf = 0.0, correct = 0.0, count = 0.0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < preds[i].size(); ++c) {
                if (preds[i][c] > preds[i][best]) best = c;
            }
            const double q = preds[i][best];
            const bool inside = m + 1 == bins ? (q >= lo && q <= 1.0) : (q >= lo && q < hi);
            if (!inside) continue;
            count += 1.0;
            conf += q;
            if (best == labels[i]) correct += 1.0;
        }
        if (count == 0.0) continue;
        total += (count / n) * std::abs(correct / count - conf / count);
    }
    return total;
}

// Full sort by (entropy desc, id asc), then the first k ids.
inline std::vector<std::size_t> brute_force_top_k(const std::vector<ProbabilityVector>& means,
                                                  const std::vector<std::size_t>& ids, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> rows;
    for (std::size_t i = 0; i < means.size(); ++i) {
        double h = 0.0;
        for (double v : means[i]) {
            if (v > 0) h -= v * std::log(v);
        }
        rows.emplace_back(h, ids[i]);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(rows[i].second);
    return out;
}

}  // namespace testutil
