#include "bnnfer/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bnnfer/errors.hpp"
#include "bnnfer/rng.hpp"

namespace bnnfer::nn {

std::string to_string(DropMode mode) {
    switch (mode) {
        case DropMode::none: return "none";
        case DropMode::dropout: return "dropout";
        case DropMode::dropconnect: return "dropconnect";
    }
    return "none";
}

DropMode parse_drop_mode(const std::string& text) {
    if (text == "none") return DropMode::none;
    if (text == "dropout") return DropMode::dropout;
    if (text == "dropconnect") return DropMode::dropconnect;
    throw ValidationError("unknown drop mode '" + text + "'");
}

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "adam") return OptimizerKind::adam;
    throw ValidationError("unknown optimizer '" + text + "'");
}

void ModelConfig::validate() const {
    if (input_dim < 1) throw ValidationError("input_dim must be >= 1");
    for (std::size_t h : hidden_dims) {
        if (h < 1) throw ValidationError("hidden layer widths must be >= 1");
    }
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ValidationError("drop_rate must lie in [0, 1)");
    }
}

std::vector<std::size_t> ModelConfig::layer_dims() const {
    std::vector<std::size_t> dims;
    dims.reserve(hidden_dims.size() + 2);
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(num_classes);
    return dims;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    config.validate();
    const auto dims = config.layer_dims();
    ModelParams params;
    params.layers.reserve(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        layer.inputs = dims[l];
        layer.outputs = dims[l + 1];
        layer.weights.assign(layer.inputs * layer.outputs, 0.0);
        layer.biases.assign(layer.outputs, 0.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

ModelParams ModelParams::initialize(const ModelConfig& config) {
    ModelParams params = zeros(config);
    Rng rng = make_rng(config.seed, Stream::init);
    for (auto& layer : params.layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : layer.weights) w = dist(rng);
    }
    return params;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.size() + layer.biases.size();
    return n;
}

bool ModelParams::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(layers.begin(), layers.end(), [&](const Layer& layer) {
        return std::all_of(layer.weights.begin(), layer.weights.end(), finite) &&
               std::all_of(layer.biases.begin(), layer.biases.end(), finite);
    });
}

bool ModelParams::same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& a = layers[l];
        const auto& b = other.layers[l];
        if (a.inputs != b.inputs || a.outputs != b.outputs ||
            a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size()) {
            return false;
        }
    }
    return true;
}

void ModelParams::check_shape(const ModelConfig& config) const {
    const auto dims = config.layer_dims();
    if (layers.size() + 1 != dims.size()) {
        throw DimensionError("layer count does not match the model config");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.inputs != dims[l] || layer.outputs != dims[l + 1] ||
            layer.weights.size() != layer.inputs * layer.outputs ||
            layer.biases.size() != layer.outputs) {
            throw DimensionError("layer " + std::to_string(l) + " shape does not match config");
        }
    }
}

namespace {

std::vector<std::size_t> mask_sizes(const ModelConfig& config, MaskTarget target) {
    config.validate();
    std::vector<std::size_t> sizes;
    if (target == MaskTarget::activations) {
        sizes = config.hidden_dims;
    } else {
        const auto dims = config.layer_dims();
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) sizes.push_back(dims[l] * dims[l + 1]);
    }
    return sizes;
}

}  // namespace

StochasticMask StochasticMask::draw(const ModelConfig& config, MaskTarget target,
                                    double drop_rate, std::uint64_t seed) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ValidationError("drop_rate must lie in [0, 1)");
    }
    StochasticMask mask;
    mask.target = target;
    mask.drop_rate = drop_rate;
    mask.seed = seed;
    Rng rng(seed);
    std::bernoulli_distribution drop(drop_rate);
    for (std::size_t n : mask_sizes(config, target)) {
        std::vector<std::uint8_t> keep(n);
        for (auto& k : keep) k = drop(rng) ? 0 : 1;
        mask.layers.push_back(std::move(keep));
    }
    return mask;
}

StochasticMask StochasticMask::filled(const ModelConfig& config, MaskTarget target,
                                      double drop_rate, std::uint8_t value) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) {
        throw ValidationError("drop_rate must lie in [0, 1)");
    }
    StochasticMask mask;
    mask.target = target;
    mask.drop_rate = drop_rate;
    for (std::size_t n : mask_sizes(config, target)) {
        mask.layers.emplace_back(n, value ? 1 : 0);
    }
    return mask;
}

void StochasticMask::check_shape(const ModelParams& params) const {
    const std::size_t expected =
        target == MaskTarget::activations ? params.layers.size() - 1 : params.layers.size();
    if (layers.size() != expected) throw DimensionError("mask layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::size_t n = target == MaskTarget::activations ? params.layers[l].outputs
                                                                : params.layers[l].weights.size();
        if (layers[l].size() != n) {
            throw DimensionError("mask shape mismatch at layer " + std::to_string(l));
        }
    }
}

ForwardTrace forward_trace(const ModelParams& params, std::span<const double> input,
                           const StochasticMask* mask) {
    if (params.layers.empty()) throw DimensionError("model has no layers");
    if (input.size() != params.layers.front().inputs) {
        throw DimensionError("input length " + std::to_string(input.size()) + " != input_dim " +
                             std::to_string(params.layers.front().inputs));
    }
    for (double v : input) {
        if (!std::isfinite(v)) throw ValidationError("non-finite input feature");
    }
    if (mask) mask->check_shape(params);

    ForwardTrace trace;
    trace.inputs.reserve(params.layers.size());
    trace.pre_activations.reserve(params.layers.size());
    std::vector<double> current(input.begin(), input.end());
    const double scale = mask ? mask->scale() : 1.0;

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        const bool masked_weights = mask && mask->target == MaskTarget::weights;
        const std::uint8_t* keep = masked_weights ? mask->layers[l].data() : nullptr;

        std::vector<double> z(layer.biases);
        for (std::size_t r = 0; r < layer.outputs; ++r) {
            const double* row = &layer.weights[r * layer.inputs];
            double acc = 0.0;
            if (keep) {
                const std::uint8_t* krow = keep + r * layer.inputs;
                for (std::size_t c = 0; c < layer.inputs; ++c) {
                    if (krow[c]) acc += row[c] * scale * current[c];
                }
            } else {
                for (std::size_t c = 0; c < layer.inputs; ++c) acc += row[c] * current[c];
            }
            z[r] += acc;
        }

        trace.inputs.push_back(std::move(current));
        const bool last = l + 1 == params.layers.size();
        if (last) {
            trace.logits = z;
        } else {
            current.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) current[i] = z[i] > 0.0 ? z[i] : 0.0;
            if (mask && mask->target == MaskTarget::activations) {
                const auto& k = mask->layers[l];
                for (std::size_t i = 0; i < current.size(); ++i) current[i] = k[i] ? current[i] * scale : 0.0;
            }
        }
        trace.pre_activations.push_back(std::move(z));
    }
    if (mask) trace.mask = *mask;
    return trace;
}

std::vector<double> forward(const ModelParams& params, std::span<const double> input,
                            const StochasticMask* mask) {
    return forward_trace(params, input, mask).logits;
}

ProbabilityVector softmax(std::span<const double> logits) {
    if (logits.empty()) throw ValidationError("softmax of an empty vector");
    for (double v : logits) {
        if (!std::isfinite(v)) throw ValidationError("non-finite logit");
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    ProbabilityVector p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - peak);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

double cross_entropy_loss(std::span<const double> probs, std::size_t hard_label) {
    if (hard_label >= probs.size()) {
        throw ValidationError("label " + std::to_string(hard_label) + " out of range");
    }
    return -std::log(std::max(probs[hard_label], kProbabilityFloor));
}

Gradients backward(const ModelParams& params, const ForwardTrace& trace, std::size_t hard_label,
                   const StochasticMask* mask) {
    const bool traced = trace.mask.has_value();
    if (traced != (mask != nullptr) || (mask && !(*mask == *trace.mask))) {
        throw UsageError("backward must use the same mask as the forward pass");
    }
    if (trace.inputs.size() != params.layers.size()) {
        throw UsageError("forward trace does not belong to these parameters");
    }

    const ProbabilityVector probs = softmax(trace.logits);
    if (hard_label >= probs.size()) {
        throw ValidationError("label " + std::to_string(hard_label) + " out of range");
    }

    Gradients grads = params;
    for (auto& layer : grads.layers) {
        std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
        std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
    }
    // Inside the clamp the loss is constant, so every derivative vanishes.
    if (probs[hard_label] < kProbabilityFloor) return grads;

    std::vector<double> delta(probs);
    delta[hard_label] -= 1.0;
    const double scale = mask ? mask->scale() : 1.0;

    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const Layer& layer = params.layers[l];
        Layer& g = grads.layers[l];
        const auto& x = trace.inputs[l];
        const std::uint8_t* keep =
            (mask && mask->target == MaskTarget::weights) ? mask->layers[l].data() : nullptr;

        for (std::size_t r = 0; r < layer.outputs; ++r) {
            g.biases[r] = delta[r];
            double* grow = &g.weights[r * layer.inputs];
            if (keep) {
                const std::uint8_t* krow = keep + r * layer.inputs;
                for (std::size_t c = 0; c < layer.inputs; ++c) {
                    grow[c] = krow[c] ? delta[r] * x[c] * scale : 0.0;
                }
            } else {
                for (std::size_t c = 0; c < layer.inputs; ++c) grow[c] = delta[r] * x[c];
            }
        }
        if (l == 0) break;

        // Propagate to the previous layer's (masked) ReLU output.
        std::vector<double> upstream(layer.inputs, 0.0);
        for (std::size_t r = 0; r < layer.outputs; ++r) {
            const double* row = &layer.weights[r * layer.inputs];
            if (keep) {
                const std::uint8_t* krow = keep + r * layer.inputs;
                for (std::size_t c = 0; c < layer.inputs; ++c) {
                    if (krow[c]) upstream[c] += delta[r] * row[c] * scale;
                }
            } else {
                for (std::size_t c = 0; c < layer.inputs; ++c) upstream[c] += delta[r] * row[c];
            }
        }
        const auto& z_prev = trace.pre_activations[l - 1];
        const std::uint8_t* act_keep =
            (mask && mask->target == MaskTarget::activations) ? mask->layers[l - 1].data() : nullptr;
        for (std::size_t c = 0; c < upstream.size(); ++c) {
            double d = z_prev[c] > 0.0 ? upstream[c] : 0.0;
            if (act_keep) d = act_keep[c] ? d * scale : 0.0;
            upstream[c] = d;
        }
        delta = std::move(upstream);
    }
    return grads;
}

Gradients backward(const ModelParams& params, std::span<const double> input,
                   std::size_t hard_label, const StochasticMask* mask) {
    return backward(params, forward_trace(params, input, mask), hard_label, mask);
}

OptimizerState OptimizerState::sgd(double learning_rate, double decay) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.learning_rate = learning_rate;
    s.decay = decay;
    return s;
}

OptimizerState OptimizerState::adam(double learning_rate) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.learning_rate = learning_rate;
    return s;
}

namespace {

template <typename Fn>
void for_each_entry(ModelParams& params, const Gradients& grads, Fn&& fn) {
    std::size_t index = 0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        for (std::size_t i = 0; i < p.weights.size(); ++i) fn(index++, p.weights[i], g.weights[i]);
        for (std::size_t i = 0; i < p.biases.size(); ++i) fn(index++, p.biases[i], g.biases[i]);
    }
}

std::vector<double*> flat_entries(ModelParams& params) {
    std::vector<double*> out;
    out.reserve(params.parameter_count());
    for (auto& layer : params.layers) {
        for (double& w : layer.weights) out.push_back(&w);
        for (double& b : layer.biases) out.push_back(&b);
    }
    return out;
}

}  // namespace

namespace {

void apply_update(OptimizerState& state, ModelParams& params, const Gradients& gradients) {
    if (state.kind == OptimizerKind::sgd) {
        const double lr = state.learning_rate / (1.0 + state.decay * static_cast<double>(state.step));
        for_each_entry(params, gradients, [&](std::size_t, double& p, double g) { p -= lr * g; });
        ++state.step;
        return;
    }

    if (!state.first_moment.same_shape(params)) {
        state.first_moment = params;
        for (auto& layer : state.first_moment.layers) {
            std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
            std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
        }
        state.second_moment = state.first_moment;
    }
    const auto m = flat_entries(state.first_moment);
    const auto v = flat_entries(state.second_moment);
    const double t = static_cast<double>(state.step + 1);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for_each_entry(params, gradients, [&](std::size_t i, double& p, double g) {
        *m[i] = state.beta1 * *m[i] + (1.0 - state.beta1) * g;
        *v[i] = state.beta2 * *v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = *m[i] / correction1;
        const double v_hat = *v[i] / correction2;
        p -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    });
    ++state.step;
}

}  // namespace

void optimizer_step(OptimizerState& state, ModelParams& params, const Gradients& gradients) {
    if (!params.same_shape(gradients)) throw DimensionError("gradient shape mismatch");
    if (!gradients.all_finite()) throw TrainingError("non-finite gradient, step refused");
    if (!(state.learning_rate > 0.0) || state.decay < 0.0) {
        throw ValidationError("learning rate must be positive and decay non-negative");
    }
    OptimizerState next_state = state;
    ModelParams next = params;
    apply_update(next_state, next, gradients);
    if (!next.all_finite()) throw TrainingError("update produced non-finite parameters, step refused");
    state = std::move(next_state);
    params = std::move(next);
}

TrainingResult train(const ModelConfig& config, std::span<const Example> examples,
                     const TrainingSettings& settings) {
    config.validate();
    if (examples.empty()) throw ValidationError("training set is empty");
    if (settings.batch_size == 0) throw ValidationError("batch size must be positive");
    for (const auto& ex : examples) {
        if (ex.features.size() != config.input_dim) {
            throw DimensionError("example feature length does not match input_dim");
        }
        if (ex.label >= config.num_classes) throw ValidationError("example label out of range");
    }

    TrainingResult result{ModelParams::initialize(config), {}};
    OptimizerState optimizer = settings.optimizer;
    Rng shuffle_rng = make_rng(config.seed, Stream::shuffle);
    Rng mask_rng = make_rng(config.seed, Stream::train_masks);
    const bool masked = config.drop_mode != DropMode::none;
    const MaskTarget target =
        config.drop_mode == DropMode::dropconnect ? MaskTarget::weights : MaskTarget::activations;

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradients batch_grad = ModelParams::zeros(config);

    for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
            const std::size_t end = std::min(order.size(), start + settings.batch_size);
            for (auto& layer : batch_grad.layers) {
                std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
                std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
            }
            for (std::size_t i = start; i < end; ++i) {
                const Example& ex = examples[order[i]];
                std::optional<StochasticMask> mask;
                if (masked) mask = StochasticMask::draw(config, target, config.drop_rate, mask_rng());
                const StochasticMask* m = mask ? &*mask : nullptr;
                const ForwardTrace trace = forward_trace(result.params, ex.features, m);
                for (double z : trace.logits) {
                    if (!std::isfinite(z)) {
                        throw TrainingError("non-finite logits at epoch " + std::to_string(epoch));
                    }
                }
                loss_sum += cross_entropy_loss(softmax(trace.logits), ex.label);
                const Gradients g = backward(result.params, trace, ex.label, m);
                for (std::size_t l = 0; l < g.layers.size(); ++l) {
                    auto& acc = batch_grad.layers[l];
                    for (std::size_t j = 0; j < acc.weights.size(); ++j) acc.weights[j] += g.layers[l].weights[j];
                    for (std::size_t j = 0; j < acc.biases.size(); ++j) acc.biases[j] += g.layers[l].biases[j];
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& layer : batch_grad.layers) {
                for (double& w : layer.weights) w *= inv;
                for (double& b : layer.biases) b *= inv;
            }
            optimizer_step(optimizer, result.params, batch_grad);
        }
        const double mean_loss = loss_sum / static_cast<double>(examples.size());
        if (!std::isfinite(mean_loss)) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
        }
        result.epoch_loss.push_back(mean_loss);
    }
    return result;
}

}  // namespace bnnfer::nn
