#include "bnnfer/model_io.hpp"

#include <fstream>

#include "bnnfer/errors.hpp"

namespace bnnfer::nn {

using nlohmann::json;

json config_to_json(const ModelConfig& config) {
    return json{{"input_dim", config.input_dim},
                {"hidden_dims", config.hidden_dims},
                {"num_classes", config.num_classes},
                {"drop_rate", config.drop_rate},
                {"drop_mode", to_string(config.drop_mode)},
                {"seed", config.seed}};
}

ModelConfig config_from_json(const json& doc) {
    try {
        ModelConfig config;
        config.input_dim = doc.at("input_dim").get<std::size_t>();
        config.hidden_dims = doc.at("hidden_dims").get<std::vector<std::size_t>>();
        config.num_classes = doc.at("num_classes").get<std::size_t>();
        config.drop_rate = doc.at("drop_rate").get<double>();
        config.drop_mode = parse_drop_mode(doc.at("drop_mode").get<std::string>());
        config.seed = doc.at("seed").get<std::uint64_t>();
        config.validate();
        return config;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

json model_to_json(const Model& model) {
    json layers = json::array();
    for (const auto& layer : model.params.layers) {
        layers.push_back(json{{"inputs", layer.inputs},
                              {"outputs", layer.outputs},
                              {"weights", layer.weights},
                              {"biases", layer.biases}});
    }
    return json{{"format_version", kModelFormatVersion},
                {"config", config_to_json(model.config)},
                {"layers", std::move(layers)}};
}

Model model_from_json(const json& doc) {
    Model model;
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw FormatError("unsupported model format_version " + std::to_string(version));
        }
        model.config = config_from_json(doc.at("config"));
        for (const auto& item : doc.at("layers")) {
            Layer layer;
            layer.inputs = item.at("inputs").get<std::size_t>();
            layer.outputs = item.at("outputs").get<std::size_t>();
            layer.weights = item.at("weights").get<std::vector<double>>();
            layer.biases = item.at("biases").get<std::vector<double>>();
            model.params.layers.push_back(std::move(layer));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("model document: ") + e.what());
    }
    model.params.check_shape(model.config);
    return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << model_to_json(model).dump(1) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return model_from_json(doc);
}

}  // namespace bnnfer::nn
