#pragma once

// Feed-forward classifier built from scratch: ReLU hidden layers, a linear
// output layer, softmax cross-entropy, and Bernoulli masks on either hidden
// activations (dropout) or individual weights (dropconnect).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnnfer/types.hpp"

namespace bnnfer::nn {

enum class DropMode { none, dropout, dropconnect };

std::string to_string(DropMode mode);
DropMode parse_drop_mode(const std::string& text);

struct ModelConfig {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 8;
    double drop_rate = 0.0;
    DropMode drop_mode = DropMode::none;
    std::uint64_t seed = 0;

    // Throws ValidationError when an invariant is violated.
    void validate() const;

    // input_dim, hidden_dims..., num_classes
    std::vector<std::size_t> layer_dims() const;

    bool operator==(const ModelConfig&) const = default;
};

// Dense layer computing z = W x + b with W stored row-major as
// outputs x inputs.
struct Layer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<double> weights;
    std::vector<double> biases;

    double weight(std::size_t row, std::size_t col) const { return weights[row * inputs + col]; }
    double& weight(std::size_t row, std::size_t col) { return weights[row * inputs + col]; }

    bool operator==(const Layer&) const = default;
};

struct ModelParams {
    std::vector<Layer> layers;

    // All-zero parameters with the shapes implied by config.
    static ModelParams zeros(const ModelConfig& config);

    // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases,
    // drawn from the initialization stream of config.seed.
    static ModelParams initialize(const ModelConfig& config);

    std::size_t parameter_count() const;
    bool all_finite() const;
    bool same_shape(const ModelParams& other) const;

    // Throws DimensionError unless the layer shapes match config.
    void check_shape(const ModelConfig& config) const;

    bool operator==(const ModelParams&) const = default;
};

// Gradients share the parameter layout.
using Gradients = ModelParams;

struct Model {
    ModelConfig config;
    ModelParams params;

    bool operator==(const Model&) const = default;
};

enum class MaskTarget { activations, weights };

// Binary keep-masks, one per hidden layer (activations) or one per weight
// matrix (weights). Survivors are rescaled by 1 / (1 - drop_rate).
struct StochasticMask {
    MaskTarget target = MaskTarget::activations;
    double drop_rate = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::uint8_t>> layers;

    static StochasticMask draw(const ModelConfig& config, MaskTarget target, double drop_rate,
                               std::uint64_t seed);

    // Every entry set to keep (1) or drop (0).
    static StochasticMask filled(const ModelConfig& config, MaskTarget target, double drop_rate,
                                 std::uint8_t value);

    double scale() const { return 1.0 / (1.0 - drop_rate); }

    void check_shape(const ModelParams& params) const;

    bool operator==(const StochasticMask&) const = default;
};

// Intermediate values of one forward pass, needed by backward.
struct ForwardTrace {
    std::vector<std::vector<double>> inputs;          // input to each layer
    std::vector<std::vector<double>> pre_activations;  // z per layer
    std::vector<double> logits;
    std::optional<StochasticMask> mask;
};

std::vector<double> forward(const ModelParams& params, std::span<const double> input,
                            const StochasticMask* mask = nullptr);

ForwardTrace forward_trace(const ModelParams& params, std::span<const double> input,
                           const StochasticMask* mask = nullptr);

ProbabilityVector softmax(std::span<const double> logits);

inline constexpr double kProbabilityFloor = 1e-12;

// -ln(max(probs[label], 1e-12))
double cross_entropy_loss(std::span<const double> probs, std::size_t hard_label);

// Exact gradient of cross_entropy_loss(softmax(forward(...))). The trace
// overload throws UsageError when mask differs from the one used to build
// the trace.
Gradients backward(const ModelParams& params, const ForwardTrace& trace, std::size_t hard_label,
                   const StochasticMask* mask = nullptr);
Gradients backward(const ModelParams& params, std::span<const double> input,
                   std::size_t hard_label, const StochasticMask* mask = nullptr);

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    // SGD only: lr_t = lr / (1 + decay * t), t = completed steps.
    double decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    Gradients first_moment;
    Gradients second_moment;

    static OptimizerState sgd(double learning_rate = 1e-2, double decay = 0.0);
    static OptimizerState adam(double learning_rate = 1e-3);
};

// Applies one update in place. Non-finite gradients raise TrainingError and
// leave both params and state untouched.
void optimizer_step(OptimizerState& state, ModelParams& params, const Gradients& gradients);

struct Example {
    std::span<const double> features;
    std::size_t label = 0;
};

struct TrainingSettings {
    std::size_t epochs = 80;
    std::size_t batch_size = 32;
    OptimizerState optimizer = OptimizerState::adam();
};

struct TrainingResult {
    ModelParams params;
    std::vector<double> epoch_loss;  // mean training loss, indexed by epoch
};

// Mini-batch training with a per-epoch seeded shuffle. When drop_mode is not
// none every sample in every batch gets a freshly drawn mask.
TrainingResult train(const ModelConfig& config, std::span<const Example> examples,
                     const TrainingSettings& settings);

}  // namespace bnnfer::nn
