#pragma once

// Experiment orchestration: data preparation, per-method training, nested
// T/N sweeps, operating-point selection, reliability curves, uncertain-sample
// reports and plot-data emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bnnfer/data.hpp"
#include "bnnfer/metrics.hpp"
#include "bnnfer/nn.hpp"
#include "bnnfer/uncertainty.hpp"

namespace bnnfer::harness {

using uncertainty::Method;

struct ExperimentConfig {
    // Canonical FER+ CSV; when empty a synthetic dataset is generated.
    std::filesystem::path ferplus_path;
    data::SynthParams synthetic;  // seed is replaced by the master seed

    std::vector<std::size_t> hidden_dims{32};
    double drop_rate = 0.5;
    // Drop mode for the deterministic baseline and ensemble members.
    nn::DropMode ensemble_drop_mode = nn::DropMode::none;

    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    std::optional<double> learning_rate;  // 1e-3 for adam, 1e-2 for sgd
    double lr_decay = 0.0;
    std::size_t epochs = 80;
    std::size_t batch_size = 32;

    std::vector<Method> methods{Method::deterministic, Method::mc_dropout, Method::mc_dropconnect,
                                Method::deep_ensemble};
    std::size_t max_samples = 15;  // sweeps cover T (or N) = 1..max_samples
    std::size_t ece_bins = metrics::kDefaultBins;
    std::size_t top_k = 5;
    std::vector<std::size_t> report_sizes{1, 5, 10, 15};
    std::filesystem::path output_dir = "out";
    std::filesystem::path models_dir;  // reuse models written by `train`
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
    nn::TrainingSettings training_settings() const;
};

// Every field is optional in the document; absent keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& doc, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
// output_dir and models_dir are omitted so manifests do not depend on where
// a run writes.
nlohmann::json to_json(const ExperimentConfig& config);

struct PreparedData {
    data::Dataset dataset;
    std::vector<const data::LabeledSample*> train;
    std::vector<const data::LabeledSample*> eval;  // test split, else validation split
    std::string source;
};

PreparedData prepare_data(const ExperimentConfig& config);

nn::ModelConfig model_config_for(const ExperimentConfig& config, Method method,
                                 std::size_t input_dim, std::size_t num_classes);

std::string model_id(const nn::ModelConfig& config);

struct TrainedMethod {
    Method method = Method::deterministic;
    std::vector<nn::Model> models;  // one model, or the ensemble members in order
    std::vector<std::vector<double>> loss_history;

    const nn::Model& single() const { return models.front(); }
    uncertainty::Ensemble ensemble() const;
};

// Trains the model(s) for one method. Ensembles get `members` networks
// seeded master, master+1, ...; other methods train one network seeded with
// the master seed.
TrainedMethod train_method(const ExperimentConfig& config, Method method, const PreparedData& data,
                           std::size_t members);

void save_trained(const std::filesystem::path& dir, const TrainedMethod& trained);
TrainedMethod load_trained(const std::filesystem::path& dir, Method method);

struct MethodPredictions {
    Method method = Method::deterministic;
    std::string model;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> hard_labels;
    std::vector<ProbabilityVector> label_distributions;
    std::vector<uncertainty::PredictiveSamples> per_input;  // input order

    std::size_t depth() const;  // samples available per input
    std::vector<ProbabilityVector> means_at(std::size_t t) const;
};

// Draws `depth` samples per eval input. MC input i uses the stream seed
// derive_seed(derive_seed(master, mc), id_i); the deterministic method
// repeats its single prediction. Ensembles use every member they have.
MethodPredictions predict_method(const ExperimentConfig& config, const TrainedMethod& trained,
                                 std::span<const data::LabeledSample* const> eval, std::size_t depth);

struct SweepRow {
    std::size_t samples = 0;  // T, or N for ensembles
    double error = 0.0;
    double nll = 0.0;
    double ece = 0.0;

    bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
    Method method = Method::deterministic;
    std::string model;
    std::uint64_t seed = 0;
    std::vector<SweepRow> rows;
};

// Row t evaluates the mean of the first t samples of every input.
SweepResult evaluate_sweep(const MethodPredictions& predictions, std::size_t max_samples,
                           std::size_t bins, std::uint64_t seed);

struct ExperimentRun {
    PreparedData data;
    std::vector<TrainedMethod> trained;
    std::vector<MethodPredictions> predictions;
    std::vector<SweepResult> sweeps;
};

// Trains (or loads from models_dir) every configured method, draws the
// sample budget once and evaluates every prefix.
ExperimentRun run_sweep(const ExperimentConfig& config);

enum class Criterion { best_accuracy, best_ece };
std::string to_string(Criterion criterion);

// Smallest T attaining the minimum error (or ECE).
std::size_t select_operating_point(const SweepResult& sweep, Criterion criterion);

struct CalibrationCurve {
    Method method = Method::deterministic;
    std::string model;
    Criterion criterion = Criterion::best_accuracy;
    std::size_t samples = 0;
    metrics::MetricsReport report;
    std::vector<metrics::ReliabilityPoint> points;
};

CalibrationCurve calibration_at(const MethodPredictions& predictions, std::size_t samples,
                                Criterion criterion, std::size_t bins);

std::vector<CalibrationCurve> calibration_curves(const ExperimentRun& run, std::size_t bins);

struct UncertainEntry {
    struct AtSize {
        std::size_t size = 0;
        ProbabilityVector mean;
        std::size_t predicted = 0;
        double entropy = 0.0;
        double kl_to_labels = 0.0;
    };
    std::size_t id = 0;
    double entropy = 0.0;  // at the largest size
    ProbabilityVector labels;
    std::size_t hard_label = 0;
    std::vector<AtSize> sizes;
};

struct UncertainReport {
    Method method = Method::deterministic;
    std::string model;
    std::vector<std::size_t> sizes;
    std::vector<UncertainEntry> entries;
};

// Ranks by entropy at the largest requested size and reports every size as
// a member (or draw) prefix. Sizes beyond the available samples are
// rejected.
UncertainReport report_uncertain(const MethodPredictions& predictions,
                                 std::span<const std::size_t> sizes, std::size_t k);

std::string class_name(std::size_t index, std::size_t num_classes);

nlohmann::json to_json(const UncertainReport& report, std::size_t num_classes);
nlohmann::json to_json(const data::LabelEntropyReport& report);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

std::string sweep_csv(std::span<const SweepResult> sweeps);
std::string reliability_csv(std::span<const metrics::ReliabilityPoint> points);

struct EmittedFiles {
    std::vector<std::filesystem::path> files;  // relative to the output dir
};

// Writes sweep.csv, one reliability_<method>_<criterion>.csv per curve, and
// manifest.json listing every file. Existing files are overwritten.
EmittedFiles emit_plot_data(const std::filesystem::path& dir, std::span<const SweepResult> sweeps,
                            std::span<const CalibrationCurve> curves,
                            const nlohmann::json& manifest_extra = nlohmann::json::object());

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace bnnfer::harness
