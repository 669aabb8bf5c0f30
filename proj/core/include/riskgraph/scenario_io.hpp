#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "riskgraph/scenario.hpp"

namespace riskgraph {

inline constexpr int kScenarioSchemaVersion = 1;

nlohmann::json scenario_to_json(const Scenario& s);
/// Parses and validates a scenario document. Errors name the field and,
/// where relevant, the agent and frame index.
Scenario scenario_from_json(const nlohmann::json& j);

void save_scenario(const Scenario& s, const std::filesystem::path& path);
/// Throws IoError if the file is unreadable, ParseError if it is malformed.
Scenario load_scenario(const std::filesystem::path& path);

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
/// Hex FNV-1a of the canonical config serialization.
std::string config_digest(const GeneratorConfig& cfg);

nlohmann::json manifest_to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Reads a whole JSON file; IoError / ParseError on failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes `j.dump(2)` followed by a newline; IoError on failure.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace riskgraph
