#include "bnnfer/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "bnnfer/errors.hpp"
#include "bnnfer/model_io.hpp"
#include "bnnfer/rng.hpp"

namespace bnnfer::harness {

using nlohmann::json;

void ExperimentConfig::validate() const {
    if (!ferplus_path.empty() && !std::filesystem::exists(ferplus_path)) {
        throw IoError("dataset not found: " + ferplus_path.string());
    }
    if (!models_dir.empty() && !std::filesystem::is_directory(models_dir)) {
        throw IoError("models directory not found: " + models_dir.string());
    }
    if (methods.empty()) throw ValidationError("no methods selected");
    if (max_samples == 0) throw ValidationError("sample range must be non-empty");
    if (ece_bins == 0) throw ValidationError("ece bin count must be >= 1");
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ValidationError("drop_rate must lie in [0, 1)");
    if (learning_rate && !(*learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (lr_decay < 0.0) throw ValidationError("learning-rate decay must be non-negative");
    if (report_sizes.empty()) throw ValidationError("report sizes must be non-empty");
    for (std::size_t s : report_sizes) {
        if (s == 0) throw ValidationError("report sizes must be positive");
    }
    for (std::size_t h : hidden_dims) {
        if (h == 0) throw ValidationError("hidden layer widths must be positive");
    }
}

nn::TrainingSettings ExperimentConfig::training_settings() const {
    nn::TrainingSettings settings;
    settings.epochs = epochs;
    settings.batch_size = batch_size;
    settings.optimizer = optimizer == nn::OptimizerKind::adam
                             ? nn::OptimizerState::adam(learning_rate.value_or(1e-3))
                             : nn::OptimizerState::sgd(learning_rate.value_or(1e-2), lr_decay);
    return settings;
}

ExperimentConfig config_from_json(const json& doc, ExperimentConfig c) {
    try {
        if (doc.contains("dataset")) {
            const auto& ds = doc.at("dataset");
            if (ds.contains("ferplus")) c.ferplus_path = ds.at("ferplus").get<std::string>();
            if (ds.contains("synthetic")) {
                const auto& s = ds.at("synthetic");
                c.synthetic.num_samples = s.value("num_samples", c.synthetic.num_samples);
                c.synthetic.num_classes = s.value("num_classes", c.synthetic.num_classes);
                c.synthetic.input_dim = s.value("input_dim", c.synthetic.input_dim);
                c.synthetic.flip_rate = s.value("flip_rate", c.synthetic.flip_rate);
                c.synthetic.separation = s.value("separation", c.synthetic.separation);
            }
        }
        if (doc.contains("model")) {
            const auto& m = doc.at("model");
            c.hidden_dims = m.value("hidden_dims", c.hidden_dims);
            c.drop_rate = m.value("drop_rate", c.drop_rate);
            if (m.contains("ensemble_drop_mode")) {
                c.ensemble_drop_mode = nn::parse_drop_mode(m.at("ensemble_drop_mode").get<std::string>());
            }
        }
        if (doc.contains("optimizer")) {
            const auto& o = doc.at("optimizer");
            if (o.contains("kind")) c.optimizer = nn::parse_optimizer_kind(o.at("kind").get<std::string>());
            if (o.contains("learning_rate")) c.learning_rate = o.at("learning_rate").get<double>();
            c.lr_decay = o.value("decay", c.lr_decay);
        }
        c.epochs = doc.value("epochs", c.epochs);
        c.batch_size = doc.value("batch_size", c.batch_size);
        if (doc.contains("methods")) {
            c.methods.clear();
            for (const auto& m : doc.at("methods")) c.methods.push_back(uncertainty::parse_method(m.get<std::string>()));
        }
        c.max_samples = doc.value("max_samples", c.max_samples);
        c.ece_bins = doc.value("ece_bins", c.ece_bins);
        c.top_k = doc.value("top_k", c.top_k);
        c.report_sizes = doc.value("report_sizes", c.report_sizes);
        if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
        if (doc.contains("models_dir")) c.models_dir = doc.at("models_dir").get<std::string>();
        c.seed = doc.value("seed", c.seed);
        c.threads = doc.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    auto config = config_from_json(doc, std::move(base));
    // Relative dataset paths are resolved against the config file location.
    if (!config.ferplus_path.empty() && config.ferplus_path.is_relative() &&
        !std::filesystem::exists(config.ferplus_path)) {
        config.ferplus_path = path.parent_path() / config.ferplus_path;
    }
    return config;
}

json to_json(const ExperimentConfig& c) {
    json methods = json::array();
    for (auto m : c.methods) methods.push_back(uncertainty::to_string(m));
    json dataset;
    if (!c.ferplus_path.empty()) {
        dataset["ferplus"] = c.ferplus_path.filename().string();
    } else {
        dataset["synthetic"] = {{"num_samples", c.synthetic.num_samples},
                                {"num_classes", c.synthetic.num_classes},
                                {"input_dim", c.synthetic.input_dim},
                                {"flip_rate", c.synthetic.flip_rate},
                                {"separation", c.synthetic.separation}};
    }
    const auto settings = c.training_settings();
    return {{"dataset", std::move(dataset)},
            {"model",
             {{"hidden_dims", c.hidden_dims},
              {"drop_rate", c.drop_rate},
              {"ensemble_drop_mode", nn::to_string(c.ensemble_drop_mode)}}},
            {"optimizer",
             {{"kind", nn::to_string(c.optimizer)},
              {"learning_rate", settings.optimizer.learning_rate},
              {"decay", c.lr_decay}}},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"methods", std::move(methods)},
            {"max_samples", c.max_samples},
            {"ece_bins", c.ece_bins},
            {"top_k", c.top_k},
            {"report_sizes", c.report_sizes},
            {"seed", c.seed}};
}

PreparedData prepare_data(const ExperimentConfig& config) {
    PreparedData prepared;
    if (!config.ferplus_path.empty()) {
        prepared.dataset = data::load_ferplus_csv(config.ferplus_path);
        prepared.source = config.ferplus_path.filename().string();
    } else {
        auto params = config.synthetic;
        params.seed = config.seed;
        prepared.dataset = data::synth_aleatoric(params);
        prepared.source = "synthetic";
    }
    prepared.train = prepared.dataset.split(data::Usage::train);
    prepared.eval = prepared.dataset.split(data::Usage::test);
    if (prepared.eval.empty()) prepared.eval = prepared.dataset.split(data::Usage::validation);
    if (prepared.train.empty()) throw ValidationError("dataset has no training samples");
    if (prepared.eval.empty()) throw ValidationError("dataset has no test or validation samples");
    return prepared;
}

nn::ModelConfig model_config_for(const ExperimentConfig& config, Method method,
                                 std::size_t input_dim, std::size_t num_classes) {
    nn::ModelConfig mc;
    mc.input_dim = input_dim;
    mc.hidden_dims = config.hidden_dims;
    mc.num_classes = num_classes;
    mc.seed = config.seed;
    switch (method) {
        case Method::mc_dropout:
            mc.drop_mode = nn::DropMode::dropout;
            mc.drop_rate = config.drop_rate;
            break;
        case Method::mc_dropconnect:
            mc.drop_mode = nn::DropMode::dropconnect;
            mc.drop_rate = config.drop_rate;
            break;
        case Method::deterministic:
        case Method::deep_ensemble:
            mc.drop_mode = config.ensemble_drop_mode;
            mc.drop_rate = config.ensemble_drop_mode == nn::DropMode::none ? 0.0 : config.drop_rate;
            break;
    }
    mc.validate();
    return mc;
}

std::string model_id(const nn::ModelConfig& config) {
    std::string id = "mlp";
    for (std::size_t d : config.layer_dims()) id += "-" + std::to_string(d);
    return id;
}

uncertainty::Ensemble TrainedMethod::ensemble() const {
    if (models.empty()) throw ValidationError("no trained models");
    std::vector<nn::ModelParams> members;
    std::vector<std::uint64_t> seeds;
    for (const auto& m : models) {
        members.push_back(m.params);
        seeds.push_back(m.config.seed);
    }
    return uncertainty::Ensemble(models.front().config, std::move(members), std::move(seeds));
}

TrainedMethod train_method(const ExperimentConfig& config, Method method, const PreparedData& data,
                           std::size_t members) {
    const auto mc = model_config_for(config, method, data.dataset.feature_dim(), data.dataset.num_classes());
    const auto examples = data::to_examples(data.train);
    const auto settings = config.training_settings();

    TrainedMethod trained;
    trained.method = method;
    if (method == Method::deep_ensemble) {
        if (members == 0) throw ValidationError("an ensemble needs at least one member");
        const auto ensemble = uncertainty::train_ensemble(mc, examples, members, settings, config.threads);
        for (std::size_t i = 0; i < ensemble.size(); ++i) {
            nn::ModelConfig member = mc;
            member.seed = ensemble.member_seeds()[i];
            trained.models.push_back({member, ensemble.members()[i]});
        }
        // train_ensemble keeps parameters only; no per-member loss history.
        return trained;
    }
    try {
        auto result = nn::train(mc, examples, settings);
        trained.models.push_back({mc, std::move(result.params)});
        trained.loss_history.push_back(std::move(result.epoch_loss));
    } catch (const TrainingError& e) {
        throw TrainingError(uncertainty::to_string(method) + ": " + e.what());
    }
    return trained;
}

void save_trained(const std::filesystem::path& dir, const TrainedMethod& trained) {
    const auto target = dir / uncertainty::to_string(trained.method);
    if (trained.method == Method::deep_ensemble) {
        uncertainty::save_ensemble(target, trained.ensemble());
        return;
    }
    std::error_code ec;
    std::filesystem::create_directories(target, ec);
    if (ec) throw IoError("cannot create " + target.string() + ": " + ec.message());
    nn::save_model(target / "model.json", trained.single());
}

TrainedMethod load_trained(const std::filesystem::path& dir, Method method) {
    const auto source = dir / uncertainty::to_string(method);
    TrainedMethod trained;
    trained.method = method;
    if (method == Method::deep_ensemble) {
        const auto ensemble = uncertainty::load_ensemble(source);
        for (std::size_t i = 0; i < ensemble.size(); ++i) {
            nn::ModelConfig member = ensemble.config();
            member.seed = ensemble.member_seeds()[i];
            trained.models.push_back({member, ensemble.members()[i]});
        }
    } else {
        trained.models.push_back(nn::load_model(source / "model.json"));
    }
    return trained;
}

std::size_t MethodPredictions::depth() const {
    if (per_input.empty()) return 0;
    std::size_t d = per_input.front().size();
    for (const auto& p : per_input) d = std::min(d, p.size());
    return d;
}

std::vector<ProbabilityVector> MethodPredictions::means_at(std::size_t t) const {
    std::vector<ProbabilityVector> means;
    means.reserve(per_input.size());
    for (const auto& p : per_input) means.push_back(p.prefix(t).mean);
    return means;
}

MethodPredictions predict_method(const ExperimentConfig& config, const TrainedMethod& trained,
                                 std::span<const data::LabeledSample* const> eval, std::size_t depth) {
    if (trained.models.empty()) throw ValidationError("no trained models");
    if (depth == 0) throw ValidationError("sample depth must be >= 1");
    MethodPredictions out;
    out.method = trained.method;
    out.model = model_id(trained.models.front().config);
    const std::uint64_t mc_seed = derive_seed(config.seed, static_cast<std::uint64_t>(Stream::mc_sampling));
    const auto ensemble = trained.method == Method::deep_ensemble
                              ? std::optional<uncertainty::Ensemble>(trained.ensemble())
                              : std::nullopt;

    for (const auto* s : eval) {
        out.ids.push_back(s->id);
        out.hard_labels.push_back(s->hard_label);
        out.label_distributions.push_back(s->label_dist.probabilities);
        const auto& model = trained.models.front();
        const std::uint64_t input_seed = derive_seed(mc_seed, s->id);
        switch (trained.method) {
            case Method::deterministic: {
                const auto p = uncertainty::predict_proba(model.params, s->features);
                out.per_input.push_back(uncertainty::PredictiveSamples::from_samples(
                    Method::deterministic, std::vector<ProbabilityVector>(depth, p)));
                break;
            }
            case Method::mc_dropout:
                out.per_input.push_back(
                    uncertainty::mc_dropout_predict(model.params, model.config, s->features, depth, input_seed));
                break;
            case Method::mc_dropconnect:
                out.per_input.push_back(uncertainty::mc_dropconnect_predict(model.params, model.config,
                                                                            s->features, depth, input_seed));
                break;
            case Method::deep_ensemble:
                out.per_input.push_back(uncertainty::ensemble_predict(*ensemble, s->features));
                break;
        }
    }
    return out;
}

SweepResult evaluate_sweep(const MethodPredictions& predictions, std::size_t max_samples,
                           std::size_t bins, std::uint64_t seed) {
    if (max_samples == 0) throw ValidationError("sample range must be non-empty");
    if (predictions.depth() < max_samples) {
        throw ValidationError("only " + std::to_string(predictions.depth()) + " samples per input, " +
                              std::to_string(max_samples) + " requested");
    }
    SweepResult result;
    result.method = predictions.method;
    result.model = predictions.model;
    result.seed = seed;
    for (std::size_t t = 1; t <= max_samples; ++t) {
        const auto means = predictions.means_at(t);
        SweepRow row;
        row.samples = t;
        row.error = metrics::classification_error(means, predictions.hard_labels);
        row.nll = metrics::nll(means, predictions.hard_labels);
        row.ece = metrics::ece(means, predictions.hard_labels, bins).ece;
        result.rows.push_back(row);
    }
    return result;
}

ExperimentRun run_sweep(const ExperimentConfig& config) {
    config.validate();
    ExperimentRun run;
    run.data = prepare_data(config);
    for (Method method : config.methods) {
        TrainedMethod trained;
        if (!config.models_dir.empty()) {
            trained = load_trained(config.models_dir, method);
            if (trained.models.front().config.input_dim != run.data.dataset.feature_dim() ||
                trained.models.front().config.num_classes != run.data.dataset.num_classes()) {
                throw DimensionError("stored " + uncertainty::to_string(method) +
                                     " model does not match the dataset shape");
            }
        } else {
            trained = train_method(config, method, run.data, config.max_samples);
        }
        auto predictions = predict_method(config, trained, run.data.eval, config.max_samples);
        run.sweeps.push_back(evaluate_sweep(predictions, config.max_samples, config.ece_bins, config.seed));
        run.predictions.push_back(std::move(predictions));
        run.trained.push_back(std::move(trained));
    }
    return run;
}

std::string to_string(Criterion criterion) {
    return criterion == Criterion::best_accuracy ? "best_accuracy" : "best_ece";
}

std::size_t select_operating_point(const SweepResult& sweep, Criterion criterion) {
    if (sweep.rows.empty()) throw ValidationError("empty sweep");
    const SweepRow* best = &sweep.rows.front();
    for (const auto& row : sweep.rows) {
        const double value = criterion == Criterion::best_accuracy ? row.error : row.ece;
        const double incumbent = criterion == Criterion::best_accuracy ? best->error : best->ece;
        if (value < incumbent || (value == incumbent && row.samples < best->samples)) best = &row;
    }
    return best->samples;
}

CalibrationCurve calibration_at(const MethodPredictions& predictions, std::size_t samples,
                                Criterion criterion, std::size_t bins) {
    CalibrationCurve curve;
    curve.method = predictions.method;
    curve.model = predictions.model;
    curve.criterion = criterion;
    curve.samples = samples;
    curve.report = metrics::evaluate(predictions.means_at(samples), predictions.hard_labels, bins);
    curve.points = metrics::reliability_curve(curve.report.bins);
    return curve;
}

std::vector<CalibrationCurve> calibration_curves(const ExperimentRun& run, std::size_t bins) {
    std::vector<CalibrationCurve> curves;
    for (std::size_t i = 0; i < run.sweeps.size(); ++i) {
        for (Criterion c : {Criterion::best_accuracy, Criterion::best_ece}) {
            const std::size_t t = select_operating_point(run.sweeps[i], c);
            curves.push_back(calibration_at(run.predictions[i], t, c, bins));
        }
    }
    return curves;
}

UncertainReport report_uncertain(const MethodPredictions& predictions,
                                 std::span<const std::size_t> sizes, std::size_t k) {
    if (sizes.empty()) throw ValidationError("report sizes must be non-empty");
    const std::size_t largest = *std::max_element(sizes.begin(), sizes.end());
    for (std::size_t s : sizes) {
        if (s == 0) throw ValidationError("report sizes must be positive");
    }
    if (largest > predictions.depth()) {
        throw ValidationError("requested size " + std::to_string(largest) + " exceeds the " +
                              std::to_string(predictions.depth()) + " available members/samples");
    }

    UncertainReport report;
    report.method = predictions.method;
    report.model = predictions.model;
    report.sizes.assign(sizes.begin(), sizes.end());

    const auto means = predictions.means_at(largest);
    const auto ranking = metrics::rank_by_entropy(means, predictions.ids, predictions.label_distributions,
                                                  std::min(k, means.size()));
    for (const auto& ranked : ranking) {
        const auto pos = static_cast<std::size_t>(
            std::find(predictions.ids.begin(), predictions.ids.end(), ranked.id) - predictions.ids.begin());
        UncertainEntry entry;
        entry.id = ranked.id;
        entry.entropy = ranked.entropy;
        entry.labels = ranked.labels;
        entry.hard_label = predictions.hard_labels[pos];
        for (std::size_t s : sizes) {
            UncertainEntry::AtSize at;
            at.size = s;
            at.mean = predictions.per_input[pos].prefix(s).mean;
            at.predicted = argmax(at.mean);
            at.entropy = metrics::predictive_entropy(at.mean);
            at.kl_to_labels = metrics::soft_label_divergence(at.mean, entry.labels);
            entry.sizes.push_back(std::move(at));
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::string class_name(std::size_t index, std::size_t num_classes) {
    if (num_classes == data::kEmotionClasses && index < data::kEmotionClasses) {
        return std::string(data::kClassNames[index]);
    }
    return "class_" + std::to_string(index);
}

json to_json(const UncertainReport& report, std::size_t num_classes) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        json sizes = json::array();
        for (const auto& at : e.sizes) {
            sizes.push_back({{"size", at.size},
                             {"probabilities", at.mean},
                             {"predicted", at.predicted},
                             {"predicted_name", class_name(at.predicted, num_classes)},
                             {"entropy", at.entropy},
                             {"kl_to_labels", at.kl_to_labels}});
        }
        entries.push_back({{"id", e.id},
                           {"entropy", e.entropy},
                           {"label_distribution", e.labels},
                           {"true_label", e.hard_label},
                           {"true_label_name", class_name(e.hard_label, num_classes)},
                           {"predictions", std::move(sizes)}});
    }
    json names = json::array();
    for (std::size_t c = 0; c < num_classes; ++c) names.push_back(class_name(c, num_classes));
    return {{"method", uncertainty::to_string(report.method)},
            {"model", report.model},
            {"sizes", report.sizes},
            {"class_names", std::move(names)},
            {"entries", std::move(entries)}};
}

json to_json(const data::LabelEntropyReport& report) {
    return {{"mean", report.mean},
            {"max", report.max},
            {"histogram_edges", report.histogram_edges},
            {"histogram_counts", report.histogram_counts}};
}

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc()) throw ValidationError("cannot format number");
    return std::string(buf, ptr);
}

std::string sweep_csv(std::span<const SweepResult> sweeps) {
    std::ostringstream out;
    out << "method,model,T,error,nll,ece\n";
    for (const auto& sweep : sweeps) {
        for (const auto& row : sweep.rows) {
            out << uncertainty::to_string(sweep.method) << ',' << sweep.model << ',' << row.samples << ','
                << format_double(row.error) << ',' << format_double(row.nll) << ','
                << format_double(row.ece) << '\n';
        }
    }
    return out.str();
}

std::string reliability_csv(std::span<const metrics::ReliabilityPoint> points) {
    std::ostringstream out;
    out << "bin_lo,bin_hi,confidence,accuracy,count\n";
    for (const auto& p : points) {
        out << format_double(p.lo) << ',' << format_double(p.hi) << ',' << format_double(p.confidence) << ','
            << format_double(p.accuracy) << ',' << p.count << '\n';
    }
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const json& doc) {
    write_text(path, doc.dump(2) + "\n");
}

EmittedFiles emit_plot_data(const std::filesystem::path& dir, std::span<const SweepResult> sweeps,
                            std::span<const CalibrationCurve> curves, const json& manifest_extra) {
    EmittedFiles emitted;
    json files = json::array();
    if (!sweeps.empty()) {
        write_text(dir / "sweep.csv", sweep_csv(sweeps));
        emitted.files.emplace_back("sweep.csv");
        files.push_back({{"file", "sweep.csv"}, {"kind", "sweep"}, {"columns", "method,model,T,error,nll,ece"}});
    }
    for (const auto& curve : curves) {
        const std::string name =
            "reliability_" + uncertainty::to_string(curve.method) + "_" + to_string(curve.criterion) + ".csv";
        write_text(dir / name, reliability_csv(curve.points));
        emitted.files.emplace_back(name);
        files.push_back({{"file", name},
                         {"kind", "reliability"},
                         {"method", uncertainty::to_string(curve.method)},
                         {"model", curve.model},
                         {"criterion", to_string(curve.criterion)},
                         {"T", curve.samples},
                         {"columns", "bin_lo,bin_hi,confidence,accuracy,count"}});
    }
    json manifest = manifest_extra;
    manifest["files"] = std::move(files);
    write_json(dir / "manifest.json", manifest);
    emitted.files.emplace_back("manifest.json");
    return emitted;
}

}  // namespace bnnfer::harness
