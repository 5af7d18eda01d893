#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "bnnfer/errors.hpp"
#include "bnnfer/model_io.hpp"
#include "bnnfer/nn.hpp"
#include "test_util.hpp"

using namespace bnnfer;
using namespace bnnfer::nn;

TEST_CASE("forward: zero parameters give zero logits") {
    ModelConfig config{5, {7, 3}, 4};
    const auto params = ModelParams::zeros(config);
    const std::vector<double> x{0.1, -2.0, 3.5, 0.0, 9.0};
    for (double v : forward(params, x)) CHECK(v == 0.0);
}

TEST_CASE("forward: a keep-everything mask at drop_rate 0 is a no-op") {
    ModelConfig config{4, {8}, 3};
    config.seed = 7;
    const auto params = testutil::random_params(config, 7);
    const std::vector<double> x{0.3, -0.2, 0.9, 0.4};
    for (auto target : {MaskTarget::activations, MaskTarget::weights}) {
        const auto mask = StochasticMask::draw(config, target, 0.0, 99);
        CHECK(forward(params, x, &mask) == forward(params, x));
    }
}

TEST_CASE("forward matches a straight-line matrix arithmetic oracle") {
    ModelConfig config{4, {8}, 3};
    config.seed = 42;
    const auto params = testutil::random_params(config, 42);
    const std::vector<double> x{0.25, -1.5, 0.75, 2.0};

    const Layer& l1 = params.layers[0];
    const Layer& l2 = params.layers[1];
    double hidden[8];
    for (int j = 0; j < 8; ++j) {
        double z = l1.biases[j];
        for (int i = 0; i < 4; ++i) z += l1.weights[j * 4 + i] * x[i];
        hidden[j] = z > 0 ? z : 0;
    }
    double expected[3];
    for (int k = 0; k < 3; ++k) {
        double z = l2.biases[k];
        for (int j = 0; j < 8; ++j) z += l2.weights[k * 8 + j] * hidden[j];
        expected[k] = z;
    }
    const auto logits = forward(params, x);
    REQUIRE(logits.size() == 3);
    for (int k = 0; k < 3; ++k) CHECK(logits[k] == doctest::Approx(expected[k]).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) CHECK(std::abs(logits[k] - expected[k]) < 1e-12);
}

TEST_CASE("forward rejects bad input") {
    ModelConfig config{3, {4}, 2};
    const auto params = ModelParams::initialize(config);
    CHECK_THROWS_AS(forward(params, std::vector<double>{1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(forward(params, std::vector<double>{1.0, NAN, 0.0}), ValidationError);
    ModelConfig other{3, {5}, 2};
    const auto mask = StochasticMask::draw(other, MaskTarget::activations, 0.5, 1);
    CHECK_THROWS_AS(forward(params, std::vector<double>{1.0, 2.0, 3.0}, &mask), DimensionError);
}

TEST_CASE("softmax") {
    SUBCASE("symmetric logits") {
        const auto p = softmax(std::vector<double>{0, 0, 0});
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("large logits do not overflow") {
        const auto p = softmax(std::vector<double>{1000, 0, 0});
        CHECK(p[0] == doctest::Approx(1.0));
        CHECK(p[1] < 1e-300);
        CHECK(std::isfinite(p[1]));
    }
    SUBCASE("direct exponentiation oracle") {
        const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
        const double z = e1 + e2 + e3;
        const auto p = softmax(std::vector<double>{1, 2, 3});
        CHECK(std::abs(p[0] - e1 / z) < 1e-15);
        CHECK(std::abs(p[1] - e2 / z) < 1e-15);
        CHECK(std::abs(p[2] - e3 / z) < 1e-15);
    }
    SUBCASE("non-finite logits are rejected") {
        CHECK_THROWS_AS(softmax(std::vector<double>{1.0, INFINITY}), ValidationError);
    }
    SUBCASE("random logits up to magnitude 1e3 stay on the simplex") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1000.0, 1000.0);
        for (int trial = 0; trial < 2000; ++trial) {
            std::vector<double> logits(2 + trial % 15);
            for (double& v : logits) v = u(rng);
            const auto p = softmax(logits);
            double sum = 0;
            for (double v : p) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("cross-entropy loss") {
    CHECK(cross_entropy_loss(std::vector<double>{0, 1, 0}, 1) == 0.0);
    CHECK(cross_entropy_loss(std::vector<double>{0.5, 0.25, 0.25}, 0) ==
          doctest::Approx(0.693147180559945).epsilon(1e-12));
    CHECK(cross_entropy_loss(std::vector<double>{1, 0, 0}, 2) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy_loss(std::vector<double>{1, 0}, 2), ValidationError);
}

TEST_CASE("backward matches central finite differences on random configs") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const auto config = testutil::random_config(rng);
        const auto params = testutil::random_params(config, rng());
        std::vector<double> x(config.input_dim);
        std::normal_distribution<double> n(0.0, 1.0);
        for (double& v : x) v = n(rng);
        const std::size_t label = rng() % config.num_classes;

        std::optional<StochasticMask> mask;
        if (trial % 3 == 1) mask = StochasticMask::draw(config, MaskTarget::activations, 0.3, rng());
        if (trial % 3 == 2) mask = StochasticMask::draw(config, MaskTarget::weights, 0.3, rng());
        const StochasticMask* m = mask ? &*mask : nullptr;

        const auto grads = backward(params, x, label, m);
        const double worst = testutil::max_fd_relative_error(params, grads, x, label, m, 1e-5);
        CAPTURE(trial);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("backward: balanced symmetric batch at zero weights has zero output-bias gradient") {
    ModelConfig config{2, {3}, 2};
    const auto params = ModelParams::zeros(config);
    const auto g0 = backward(params, std::vector<double>{1.0, -2.0}, 0);
    const auto g1 = backward(params, std::vector<double>{-1.0, 2.0}, 1);
    const auto& b0 = g0.layers.back().biases;
    const auto& b1 = g1.layers.back().biases;
    for (std::size_t k = 0; k < 2; ++k) CHECK(b0[k] + b1[k] == 0.0);
}

TEST_CASE("backward: a dropped hidden unit receives no gradient") {
    ModelConfig config{3, {4}, 3};
    const auto params = testutil::random_params(config, 5);
    auto mask = StochasticMask::filled(config, MaskTarget::activations, 0.5, 1);
    mask.layers[0][2] = 0;
    const auto g = backward(params, std::vector<double>{0.4, -0.3, 1.2}, 1, &mask);
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.layers[0].weight(2, c) == 0.0);
    CHECK(g.layers[0].biases[2] == 0.0);
    for (std::size_t k = 0; k < 3; ++k) CHECK(g.layers[1].weight(k, 2) == 0.0);
}

TEST_CASE("backward refuses a mask that differs from the forward pass") {
    ModelConfig config{3, {4}, 2};
    const auto params = testutil::random_params(config, 5);
    const std::vector<double> x{0.1, 0.2, 0.3};
    const auto a = StochasticMask::draw(config, MaskTarget::activations, 0.5, 1);
    const auto b = StochasticMask::draw(config, MaskTarget::activations, 0.5, 2);
    const auto trace = forward_trace(params, x, &a);
    CHECK_THROWS_AS(backward(params, trace, 0, &b), UsageError);
    CHECK_THROWS_AS(backward(params, trace, 0, nullptr), UsageError);
    CHECK_NOTHROW(backward(params, trace, 0, &a));
}

TEST_CASE("stochastic masks") {
    ModelConfig config{10, {50, 40}, 8};
    SUBCASE("shapes follow the target") {
        const auto act = StochasticMask::draw(config, MaskTarget::activations, 0.5, 3);
        REQUIRE(act.layers.size() == 2);
        CHECK(act.layers[0].size() == 50);
        CHECK(act.layers[1].size() == 40);
        const auto w = StochasticMask::draw(config, MaskTarget::weights, 0.5, 3);
        REQUIRE(w.layers.size() == 3);
        CHECK(w.layers[0].size() == 500);
        CHECK(w.layers[2].size() == 320);
    }
    SUBCASE("zero fraction matches drop_rate within 3 standard errors") {
        for (double p : {0.2, 0.5}) {
            std::size_t zeros = 0, total = 0;
            for (std::uint64_t s = 0; s < 200; ++s) {
                const auto m = StochasticMask::draw(config, MaskTarget::weights, p, s);
                for (const auto& layer : m.layers) {
                    for (auto v : layer) {
                        CHECK((v == 0 || v == 1));
                        zeros += v == 0;
                        ++total;
                    }
                }
            }
            const double frac = static_cast<double>(zeros) / static_cast<double>(total);
            const double se = std::sqrt(p * (1 - p) / static_cast<double>(total));
            CHECK(std::abs(frac - p) < 3 * se);
        }
    }
    SUBCASE("invalid rates") {
        CHECK_THROWS_AS(StochasticMask::draw(config, MaskTarget::weights, 1.0, 0), ValidationError);
        CHECK_THROWS_AS(StochasticMask::draw(config, MaskTarget::weights, -0.1, 0), ValidationError);
    }
}

TEST_CASE("inverted masking preserves expected activations") {
    ModelConfig config{6, {10}, 3};
    const auto params = testutil::random_params(config, 11);
    const std::vector<double> x{0.5, -0.4, 0.9, 0.1, -0.7, 0.3};
    const auto clean = forward_trace(params, x);
    const std::size_t draws = 20000;

    SUBCASE("dropout on hidden activations") {
        const double p = 0.5;
        std::vector<double> sum(10, 0.0), sq(10, 0.0);
        for (std::size_t d = 0; d < draws; ++d) {
            const auto mask = StochasticMask::draw(config, MaskTarget::activations, p, d);
            const auto t = forward_trace(params, x, &mask);
            for (std::size_t j = 0; j < 10; ++j) {
                sum[j] += t.inputs[1][j];
                sq[j] += t.inputs[1][j] * t.inputs[1][j];
            }
        }
        for (std::size_t j = 0; j < 10; ++j) {
            const double mean = sum[j] / draws;
            const double var = sq[j] / draws - mean * mean;
            const double se = std::sqrt(std::max(var, 0.0) / draws);
            CHECK(std::abs(mean - clean.inputs[1][j]) <= 3 * se + 1e-12);
        }
    }
    SUBCASE("dropconnect on weights") {
        const double p = 0.2;
        std::vector<double> sum(10, 0.0), sq(10, 0.0);
        for (std::size_t d = 0; d < draws; ++d) {
            const auto mask = StochasticMask::draw(config, MaskTarget::weights, p, d);
            const auto t = forward_trace(params, x, &mask);
            for (std::size_t j = 0; j < 10; ++j) {
                sum[j] += t.pre_activations[0][j];
                sq[j] += t.pre_activations[0][j] * t.pre_activations[0][j];
            }
        }
        for (std::size_t j = 0; j < 10; ++j) {
            const double mean = sum[j] / draws;
            const double se = std::sqrt(std::max(sq[j] / draws - mean * mean, 0.0) / draws);
            CHECK(std::abs(mean - clean.pre_activations[0][j]) <= 3 * se + 1e-12);
        }
    }
}

namespace {

ModelParams scalar_param(double w) {
    ModelParams p;
    p.layers.push_back(Layer{1, 1, {w}, {0.0}});
    return p;
}

}  // namespace

TEST_CASE("optimizer steps") {
    SUBCASE("sgd") {
        auto state = OptimizerState::sgd(0.1, 0.0);
        auto p = scalar_param(1.0);
        auto g = scalar_param(0.5);
        optimizer_step(state, p, g);
        CHECK(p.layers[0].weights[0] == doctest::Approx(0.95).epsilon(1e-15));
    }
    SUBCASE("sgd decay schedule lr / (1 + decay * t)") {
        auto state = OptimizerState::sgd(0.1, 0.5);
        auto p = scalar_param(0.0);
        const auto g = scalar_param(1.0);
        optimizer_step(state, p, g);  // lr 0.1
        optimizer_step(state, p, g);  // lr 0.1 / 1.5
        CHECK(p.layers[0].weights[0] == doctest::Approx(-(0.1 + 0.1 / 1.5)).epsilon(1e-15));
    }
    SUBCASE("zero gradients leave params but advance the adam step") {
        auto state = OptimizerState::adam(0.01);
        auto p = scalar_param(2.0);
        optimizer_step(state, p, scalar_param(0.0));
        optimizer_step(state, p, scalar_param(0.0));
        CHECK(p.layers[0].weights[0] == 2.0);
        CHECK(state.step == 2);
    }
    SUBCASE("adam on (w - 3)^2 matches a scalar oracle") {
        // Independent scalar Adam.
        double w = 0, m = 0, v = 0;
        for (int t = 1; t <= 100; ++t) {
            const double g = 2 * (w - 3);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mh = m / (1 - std::pow(0.9, t));
            const double vh = v / (1 - std::pow(0.999, t));
            w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        }
        REQUIRE(std::abs(w - 3) < 0.5);

        auto state = OptimizerState::adam(0.1);
        auto p = scalar_param(0.0);
        for (int t = 0; t < 100; ++t) {
            const double cur = p.layers[0].weights[0];
            auto g = scalar_param(2 * (cur - 3));
            g.layers[0].biases[0] = 0.0;
            optimizer_step(state, p, g);
        }
        CHECK(std::abs(p.layers[0].weights[0] - 3) < 0.5);
        CHECK(std::abs(p.layers[0].weights[0] - w) < 1e-12);
        CHECK(state.step == 100);
    }
    SUBCASE("non-finite gradients are refused") {
        auto state = OptimizerState::adam(0.1);
        auto p = scalar_param(1.0);
        CHECK_THROWS_AS(optimizer_step(state, p, scalar_param(NAN)), TrainingError);
        CHECK(p.layers[0].weights[0] == 1.0);
        CHECK(state.step == 0);
    }
    SUBCASE("shape mismatch") {
        auto state = OptimizerState::sgd();
        auto p = scalar_param(1.0);
        ModelParams g = ModelParams::zeros(ModelConfig{2, {}, 2});
        CHECK_THROWS_AS(optimizer_step(state, p, g), DimensionError);
    }
}

TEST_CASE("train") {
    // Two blobs at (+2, +2) and (-2, -2) with noise bounded by 1 in each
    // coordinate: the line x0 + x1 = 0 separates them perfectly.
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ys;
    for (int i = 0; i < 200; ++i) {
        const std::size_t y = i % 2;
        const double c = y == 0 ? 2.0 : -2.0;
        xs.push_back({c + noise(rng), c + noise(rng)});
        ys.push_back(y);
    }
    std::vector<Example> examples;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double side = xs[i][0] + xs[i][1];
        REQUIRE((ys[i] == 0 ? side > 0 : side < 0));
        examples.push_back({xs[i], ys[i]});
    }

    ModelConfig config{2, {8}, 2};
    config.seed = 3;
    TrainingSettings settings;
    settings.epochs = 20;
    settings.optimizer = OptimizerState::adam(0.01);

    SUBCASE("separable blobs are learned") {
        const auto result = train(config, examples, settings);
        REQUIRE(result.epoch_loss.size() == 20);
        std::size_t wrong = 0;
        for (const auto& ex : examples) {
            const auto p = softmax(forward(result.params, ex.features));
            wrong += argmax(p) != ex.label;
        }
        CHECK(static_cast<double>(wrong) / examples.size() < 0.05);
        CHECK(result.epoch_loss.back() < result.epoch_loss.front());
        CHECK(result.params.all_finite());
    }
    SUBCASE("zero epochs returns the initialization") {
        settings.epochs = 0;
        const auto result = train(config, examples, settings);
        CHECK(result.params == ModelParams::initialize(config));
        CHECK(result.epoch_loss.empty());
    }
    SUBCASE("same seed, same trajectory") {
        for (auto mode : {DropMode::none, DropMode::dropout, DropMode::dropconnect}) {
            config.drop_mode = mode;
            config.drop_rate = mode == DropMode::none ? 0.0 : 0.3;
            const auto a = train(config, examples, settings);
            const auto b = train(config, examples, settings);
            CHECK(a.epoch_loss == b.epoch_loss);
            CHECK(a.params == b.params);
            config.seed = 4;
            const auto c = train(config, examples, settings);
            CHECK(c.epoch_loss != a.epoch_loss);
            config.seed = 3;
        }
    }
    SUBCASE("invalid inputs") {
        CHECK_THROWS_AS(train(config, std::span<const Example>{}, settings), ValidationError);
        settings.batch_size = 0;
        CHECK_THROWS_AS(train(config, examples, settings), ValidationError);
    }
}

TEST_CASE("model config validation") {
    CHECK_THROWS_AS((ModelConfig{0, {}, 2}.validate()), ValidationError);
    CHECK_THROWS_AS((ModelConfig{2, {0}, 2}.validate()), ValidationError);
    CHECK_THROWS_AS((ModelConfig{2, {}, 1}.validate()), ValidationError);
    ModelConfig c{2, {}, 2};
    c.drop_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("model JSON round-trip is value-exact") {
    ModelConfig config{9, {5, 4}, 8};
    config.drop_rate = 0.2;
    config.drop_mode = DropMode::dropconnect;
    config.seed = 0xfedcba9876543210ULL;
    Model model{config, testutil::random_params(config, 123)};
    model.params.layers[0].weights[0] = 1e-300;
    model.params.layers[1].biases[1] = -0.1 + 1e-17;

    const auto restored = model_from_json(nlohmann::json::parse(model_to_json(model).dump()));
    CHECK(restored == model);

    const auto path = std::filesystem::temp_directory_path() / "bnnfer_model_roundtrip.json";
    save_model(path, model);
    CHECK(load_model(path) == model);
    std::filesystem::remove(path);

    auto doc = model_to_json(model);
    doc["format_version"] = 99;
    CHECK_THROWS_AS(model_from_json(doc), FormatError);
    doc = model_to_json(model);
    doc["layers"][0]["weights"].erase(0);
    CHECK_THROWS_AS(model_from_json(doc), DimensionError);
}
