#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "riskgraph/geometry.hpp"

namespace riskgraph {

enum class AgentClass { Person, Bicycle, Car, Motorcycle, Bus, Truck };

/// Persons and bicycles are vulnerable road users.
constexpr bool is_vulnerable(AgentClass c) {
  return c == AgentClass::Person || c == AgentClass::Bicycle;
}

std::string_view to_string(AgentClass c);
/// Parses the lower-case class name used in scenario files.
std::optional<AgentClass> parse_agent_class(std::string_view name);

/// Per-frame attributes of one agent.
struct AgentFrameState {
  int t = 0;
  Point3 position;
  Eigen::VectorXd appearance;
  std::optional<PixelObservation> observation;

  bool operator==(const AgentFrameState& o) const {
    return t == o.t && position == o.position && appearance == o.appearance &&
           observation == o.observation;
  }
};

/// One tracked road agent: identity, class, presence mask over the clip and
/// the states of the frames where it is present (ascending t).
struct Agent {
  int agent_id = 0;
  AgentClass cls = AgentClass::Car;
  std::vector<bool> presence;
  std::vector<AgentFrameState> states;

  bool vulnerable() const { return is_vulnerable(cls); }
  /// State at frame t, or nullptr when absent.
  const AgentFrameState* state_at(int t) const;

  bool operator==(const Agent&) const = default;
};

struct Scenario {
  int gamma = 20;
  double fps = 3.0;
  CameraIntrinsics intrinsics;
  std::vector<Agent> agents;
  std::vector<Eigen::VectorXd> context;  // gamma vectors of width F
  Eigen::VectorXd ego_feature;
  std::string label;
  std::optional<int> ground_truth_risk;
  std::optional<std::vector<int>> ground_truth_group;

  int feature_dim() const { return static_cast<int>(ego_feature.size()); }
  int agent_count() const { return static_cast<int>(agents.size()); }
  const Agent* find_agent(int agent_id) const;

  /// Checks every structural invariant; throws ParseError naming the field.
  void validate() const;

  bool operator==(const Scenario&) const = default;
};

/// Scene-prior fusion of an appearance vector with the frame context
/// (element-wise sum). Throws ShapeError on a length mismatch.
Eigen::VectorXd fuse_context(const Eigen::VectorXd& appearance, const Eigen::VectorXd& context);

/// Removes one agent (tracklet and all of its frame states). Throws
/// NotFoundError for an unknown id.
Scenario mask_agent(const Scenario& s, int agent_id);

/// Removes a set of agents in a single intervention.
Scenario mask_group(const Scenario& s, const std::set<int>& agent_ids);

// --- Synthetic generator -------------------------------------------------

/// The rule-derived facts for one scenario.
struct RuleOutcome {
  bool stop = false;
  std::optional<int> risk_agent;
  std::vector<int> triggering_agents;  // ascending id
};

/// Stop iff some agent, at a present frame with z > 0, comes closer than
/// d_stop to the ego origin. The risk agent is the triggering agent whose
/// closest approach happens earliest, then the smallest id.
RuleOutcome apply_stop_rule(const Scenario& s, double d_stop);

enum class ScenarioKind { Go, Stop, GroupStop };

struct GeneratorConfig {
  int gamma = 20;
  double fps = 3.0;
  int feature_dim = 16;
  CameraIntrinsics intrinsics{200.0, 200.0, 178.0, 100.0};
  int min_agents = 1;
  int max_agents = 5;
  double stop_fraction = 0.5;   // share of Stop scenarios
  double group_fraction = 0.0;  // share of Stop scenarios built as risk groups
  int group_min_size = 2;
  int group_max_size = 3;
  double d_stop = 2.0;
  double clearance = 3.5;  // minimum approach distance for non-causal agents
  double noise = 0.1;      // appearance noise std
  double context_scale = 0.3;
  double context_jitter = 0.05;
  std::uint64_t prototype_seed = 1234;
  double pedestrian_speed_min = 0.8;
  double pedestrian_speed_max = 1.6;
  double vehicle_speed_min = 2.0;
  double vehicle_speed_max = 6.0;
  double view_depth_min = 0.5;  // agents with z below this are out of view
  double train_fraction = 1.0;
  double val_fraction = 0.0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// Deterministic scenario generation. When kind is empty it is drawn from
/// stop_fraction / group_fraction using the seed.
Scenario generate_scenario(const GeneratorConfig& cfg, std::uint64_t seed,
                           std::optional<ScenarioKind> kind = std::nullopt);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::string> train, val, test;  // paths relative to the manifest
  std::filesystem::path base_dir;             // directory holding the manifest

  std::vector<std::filesystem::path> resolve(const std::vector<std::string>& split) const;
};

/// Writes n scenario files plus manifest.json under out_dir. Scenario i uses
/// seed + i. Labels follow an exact stop_fraction share assigned by a seeded
/// shuffle. Returns the manifest (base_dir = out_dir).
DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

}  // namespace riskgraph
