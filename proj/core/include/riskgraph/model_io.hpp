#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "riskgraph/model.hpp"
#include "riskgraph/train.hpp"

namespace riskgraph {

inline constexpr int kModelSchemaVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected with ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Every tensor as nested arrays (matrices row by row), the Fourier matrix,
/// running statistics, hyperconstants and the training seed.
nlohmann::json model_to_json(const Model& m);
/// Throws ParseError when a tensor shape disagrees with the hyperconstants.
Model model_from_json(const nlohmann::json& j);

void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// Hex FNV-1a of the serialized model.
std::string model_digest(const Model& m);

}  // namespace riskgraph
