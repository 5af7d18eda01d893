#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "bnnfer/nn.hpp"

namespace bnnfer::nn {

inline constexpr int kModelFormatVersion = 1;

// {format_version, config, layers: [{inputs, outputs, weights (row-major), biases}]}
nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& doc);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& doc);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace bnnfer::nn
