#include "bnnfer/cli.hpp"

#include <algorithm>
#include <ostream>

#include <CLI11.hpp>

#include "bnnfer/errors.hpp"
#include "bnnfer/harness.hpp"

namespace bnnfer::cli {

namespace {

using harness::ExperimentConfig;
using nlohmann::json;

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> methods;
    std::size_t samples = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::string data;
    std::string models;
    std::size_t threads = 1;
    std::size_t top_k = 0;
    std::size_t bins = 0;
    double drop_rate = 0.0;
    std::vector<std::size_t> hidden;
    double learning_rate = 0.0;
    std::vector<std::size_t> sizes;
    std::size_t num_samples = 0;
    std::size_t input_dim = 0;
    double flip_rate = 0.0;
    double separation = 0.0;
};

struct Options {
    CLI::Option* config = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* out = nullptr;
    CLI::Option* methods = nullptr;
    CLI::Option* samples = nullptr;
    CLI::Option* epochs = nullptr;
    CLI::Option* batch_size = nullptr;
    CLI::Option* data = nullptr;
    CLI::Option* models = nullptr;
    CLI::Option* threads = nullptr;
    CLI::Option* top_k = nullptr;
    CLI::Option* bins = nullptr;
    CLI::Option* drop_rate = nullptr;
    CLI::Option* hidden = nullptr;
    CLI::Option* learning_rate = nullptr;
    CLI::Option* sizes = nullptr;
    CLI::Option* num_samples = nullptr;
    CLI::Option* input_dim = nullptr;
    CLI::Option* flip_rate = nullptr;
    CLI::Option* separation = nullptr;
};

void add_common(CLI::App* app, Flags& f, Options& o) {
    o.config = app->add_option("--config", f.config, "JSON experiment config file");
    o.seed = app->add_option("--seed", f.seed, "master seed");
    o.out = app->add_option("--out", f.out, "output directory");
    o.methods = app->add_option("--method", f.methods,
                                "mc-dropout | mc-dropconnect | ensemble | deterministic (repeatable)");
    o.samples = app->add_option("--samples", f.samples, "maximum T (or ensemble size N)");
    o.epochs = app->add_option("--epochs", f.epochs, "training epochs");
    o.batch_size = app->add_option("--batch-size", f.batch_size, "mini-batch size");
    o.data = app->add_option("--data", f.data, "canonical FER+ CSV (synthetic data when absent)");
    o.models = app->add_option("--models", f.models, "reuse models written by `train --out`");
    o.threads = app->add_option("--threads", f.threads, "ensemble members trained concurrently");
    o.top_k = app->add_option("--top-k", f.top_k, "number of most uncertain samples to report");
    o.bins = app->add_option("--bins", f.bins, "ECE bin count");
    o.drop_rate = app->add_option("--drop-rate", f.drop_rate, "dropout/dropconnect rate");
    o.hidden = app->add_option("--hidden", f.hidden, "hidden layer widths");
    o.learning_rate = app->add_option("--lr", f.learning_rate, "learning rate");
    o.sizes = app->add_option("--sizes", f.sizes, "ensemble sizes shown by `report`");
    o.num_samples = app->add_option("--num-samples", f.num_samples, "synthetic dataset size");
    o.input_dim = app->add_option("--input-dim", f.input_dim, "synthetic feature count (a perfect square)");
    o.flip_rate = app->add_option("--flip-rate", f.flip_rate, "synthetic ambiguous-label rate");
    o.separation = app->add_option("--separation", f.separation, "synthetic class-mean separation");
}

ExperimentConfig resolve(const Flags& f, const Options& o) {
    ExperimentConfig c;
    if (o.config->count()) c = harness::load_config(f.config);
    if (o.seed->count()) c.seed = f.seed;
    if (o.out->count()) c.output_dir = f.out;
    if (o.methods->count()) {
        c.methods.clear();
        for (const auto& m : f.methods) c.methods.push_back(uncertainty::parse_method(m));
    }
    if (o.samples->count()) c.max_samples = f.samples;
    if (o.epochs->count()) c.epochs = f.epochs;
    if (o.batch_size->count()) c.batch_size = f.batch_size;
    if (o.data->count()) c.ferplus_path = f.data;
    if (o.models->count()) c.models_dir = std::filesystem::path(f.models) / "models";
    if (o.threads->count()) c.threads = f.threads;
    if (o.top_k->count()) c.top_k = f.top_k;
    if (o.bins->count()) c.ece_bins = f.bins;
    if (o.drop_rate->count()) c.drop_rate = f.drop_rate;
    if (o.hidden->count()) c.hidden_dims = f.hidden;
    if (o.learning_rate->count()) c.learning_rate = f.learning_rate;
    if (o.sizes->count()) c.report_sizes = f.sizes;
    if (o.num_samples->count()) c.synthetic.num_samples = f.num_samples;
    if (o.input_dim->count()) c.synthetic.input_dim = f.input_dim;
    if (o.flip_rate->count()) c.synthetic.flip_rate = f.flip_rate;
    if (o.separation->count()) c.synthetic.separation = f.separation;
    c.validate();
    return c;
}

json manifest_for(const std::string& command, const ExperimentConfig& c, const harness::PreparedData& data) {
    return {{"command", command},
            {"config", harness::to_json(c)},
            {"dataset",
             {{"source", data.source},
              {"samples", data.dataset.size()},
              {"train", data.train.size()},
              {"eval", data.eval.size()},
              {"skipped_rows", data.dataset.skipped_rows()},
              {"feature_dim", data.dataset.feature_dim()}}}};
}

void cmd_train(const ExperimentConfig& c, std::ostream& out) {
    const auto data = harness::prepare_data(c);
    json histories = json::object();
    json files = json::array();
    for (auto method : c.methods) {
        const auto trained = harness::train_method(c, method, data, c.max_samples);
        harness::save_trained(c.output_dir / "models", trained);
        const auto name = uncertainty::to_string(method);
        histories[name] = trained.loss_history.empty() ? json::array() : json(trained.loss_history.front());
        files.push_back("models/" + name);
        out << "trained " << name << " (" << trained.models.size() << " model"
            << (trained.models.size() == 1 ? "" : "s") << ")\n";
    }
    auto manifest = manifest_for("train", c, data);
    manifest["files"] = std::move(files);
    manifest["loss_history"] = std::move(histories);
    harness::write_json(c.output_dir / "manifest.json", manifest);
}

json observations(const std::vector<harness::SweepResult>& sweeps) {
    // ECE change from the smallest to the largest T, recorded, never enforced.
    json obs = json::object();
    for (const auto& s : sweeps) {
        const auto& first = s.rows.front();
        const auto& last = s.rows.back();
        obs[uncertainty::to_string(s.method)] = {{"ece_first", first.ece},
                                                 {"ece_last", last.ece},
                                                 {"ece_increases", last.ece > first.ece},
                                                 {"error_first", first.error},
                                                 {"error_last", last.error},
                                                 {"nll_first", first.nll},
                                                 {"nll_last", last.nll}};
    }
    return obs;
}

void emit_method_reports(const ExperimentConfig& c, const harness::ExperimentRun& run, json& manifest) {
    for (const auto& p : run.predictions) {
        const auto report = metrics::evaluate(p.means_at(c.max_samples), p.hard_labels, c.ece_bins);
        auto doc = metrics::to_json(report);
        doc["method"] = uncertainty::to_string(p.method);
        doc["model"] = p.model;
        doc["T"] = c.max_samples;
        const auto name = "metrics_" + uncertainty::to_string(p.method) + ".json";
        harness::write_json(c.output_dir / name, doc);
        manifest["reports"].push_back(name);
    }
}

void cmd_sweep(const ExperimentConfig& c, std::ostream& out) {
    const auto run = harness::run_sweep(c);
    auto manifest = manifest_for("sweep", c, run.data);
    manifest["reports"] = json::array();
    emit_method_reports(c, run, manifest);
    manifest["observations"] = observations(run.sweeps);
    harness::emit_plot_data(c.output_dir, run.sweeps, {}, manifest);
    out << harness::sweep_csv(run.sweeps);
}

void cmd_calibration(const ExperimentConfig& c, std::ostream& out) {
    const auto run = harness::run_sweep(c);
    const auto curves = harness::calibration_curves(run, c.ece_bins);
    json points = json::array();
    for (const auto& curve : curves) {
        auto report = metrics::to_json(curve.report);
        points.push_back({{"method", uncertainty::to_string(curve.method)},
                          {"model", curve.model},
                          {"criterion", harness::to_string(curve.criterion)},
                          {"T", curve.samples},
                          {"metrics", std::move(report)}});
        out << uncertainty::to_string(curve.method) << ' ' << harness::to_string(curve.criterion)
            << " T=" << curve.samples << " ece=" << harness::format_double(curve.report.ece) << '\n';
    }
    auto manifest = manifest_for("calibration", c, run.data);
    manifest["operating_points"] = std::move(points);
    manifest["observations"] = observations(run.sweeps);
    harness::emit_plot_data(c.output_dir, run.sweeps, curves, manifest);
}

void cmd_report(ExperimentConfig c, bool methods_given, std::ostream& out) {
    if (!methods_given) c.methods = {uncertainty::Method::deep_ensemble};
    const std::size_t depth = *std::max_element(c.report_sizes.begin(), c.report_sizes.end());
    const auto data = harness::prepare_data(c);
    auto manifest = manifest_for("report", c, data);
    json files = json::array();
    for (auto method : c.methods) {
        auto trained = c.models_dir.empty() ? harness::train_method(c, method, data, depth)
                                            : harness::load_trained(c.models_dir, method);
        if (method == uncertainty::Method::deep_ensemble && trained.models.size() < depth) {
            throw ValidationError("report needs " + std::to_string(depth) + " ensemble members, " +
                                  std::to_string(trained.models.size()) + " available");
        }
        const auto predictions = harness::predict_method(c, trained, data.eval, depth);
        const auto report = harness::report_uncertain(predictions, c.report_sizes, c.top_k);
        const auto name = "uncertain_" + uncertainty::to_string(method) + ".json";
        harness::write_json(c.output_dir / name, harness::to_json(report, data.dataset.num_classes()));
        files.push_back(name);
        out << name << ": " << report.entries.size() << " samples\n";
    }
    harness::write_json(c.output_dir / "label_entropy.json",
                        harness::to_json(data::label_entropy_report(data.dataset)));
    files.push_back("label_entropy.json");
    manifest["files"] = std::move(files);
    harness::write_json(c.output_dir / "manifest.json", manifest);
}

void cmd_synth(const ExperimentConfig& c, std::ostream& out) {
    auto params = c.synthetic;
    params.seed = c.seed;
    const auto dataset = data::synth_aleatoric(params);
    const auto path = c.output_dir / "synthetic.csv";
    std::error_code ec;
    std::filesystem::create_directories(c.output_dir, ec);
    if (ec) throw IoError("cannot create " + c.output_dir.string() + ": " + ec.message());
    data::save_ferplus_csv(dataset, path);
    out << "wrote " << dataset.size() << " samples to " << path.string() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Uncertainty quantification for small classifiers: MC-Dropout, MC-DropConnect, Deep Ensembles",
                 "bnnfer"};
    app.require_subcommand(1);

    Flags flags;
    Options train_opts, sweep_opts, report_opts, calibration_opts, synth_opts;
    auto* train = app.add_subcommand("train", "fit one model per method (or an ensemble)");
    auto* sweep = app.add_subcommand("sweep", "error/NLL/ECE as a function of T or N");
    auto* report = app.add_subcommand("report", "most uncertain samples across ensemble sizes");
    auto* calibration = app.add_subcommand("calibration", "reliability curves at the best operating points");
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset as canonical CSV");
    add_common(train, flags, train_opts);
    add_common(sweep, flags, sweep_opts);
    add_common(report, flags, report_opts);
    add_common(calibration, flags, calibration_opts);
    add_common(synth, flags, synth_opts);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    }

    try {
        if (train->parsed()) {
            cmd_train(resolve(flags, train_opts), out);
        } else if (sweep->parsed()) {
            cmd_sweep(resolve(flags, sweep_opts), out);
        } else if (report->parsed()) {
            cmd_report(resolve(flags, report_opts), report_opts.methods->count() > 0, out);
        } else if (calibration->parsed()) {
            cmd_calibration(resolve(flags, calibration_opts), out);
        } else if (synth->parsed()) {
            cmd_synth(resolve(flags, synth_opts), out);
        }
    } catch (const TrainingError& e) {
        err << "training failed: " << e.what() << '\n';
        return kTrainingError;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return kValidationError;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    }
    return kSuccess;
}

}  // namespace bnnfer::cli
