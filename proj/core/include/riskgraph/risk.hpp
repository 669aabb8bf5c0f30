#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskgraph/model.hpp"
#include "riskgraph/scenario.hpp"

namespace riskgraph {

inline constexpr double kDefaultDelta = 0.5;
inline constexpr double kDefaultEta = 0.2;

struct BehaviorPrediction {
  double go = 0.0;
  double stop = 0.0;
};

/// Eval-mode Go/Stop probabilities. The model must use the class names
/// {"Go", "Stop"} in that order; anything else is a ConfigError.
BehaviorPrediction predict_behavior(const Scenario& s, const Model& model);

struct GroupResult {
  std::vector<int> members;  // ascending
  double score = 0.0;        // P(Go) with the whole group removed
  double eta = 0.0;          // selection threshold; absent for explicit groups
  bool explicit_group = false;
};

struct RiskReport {
  double stop_prob = 0.0;
  double delta = kDefaultDelta;
  bool gated_in = false;  // stop_prob >= delta
  /// Set when the gate passed but the scenario has no agent to remove.
  bool empty_intervention = false;
  std::map<int, double> scores;  // agent id -> P(Go | agent removed)
  std::vector<int> ranking;      // descending score, ties by smallest id
  std::optional<int> predicted_risk;
  std::optional<GroupResult> group;
};

/// Two-stage inference: the Stop gate, then one masked forward pass per
/// agent. Passes run on up to `threads` workers; results are independent of
/// the thread count. Throws ConfigError unless 0 < delta < 1.
RiskReport risk_scores(const Scenario& s, const Model& model, double delta = kDefaultDelta, int threads = 1);

/// P(Go) after removing every agent of `group` at once. NotFoundError for
/// unknown ids, ConfigError for an empty group.
double group_risk_score(const Scenario& s, const Model& model, const std::set<int>& group);

/// Agents whose mean layer-1 ego edge weight over their valid frames
/// exceeds eta. ConfigError unless 0 <= eta <= 1.
std::set<int> identify_risk_group(const Scenario& s, const Model& model, double eta = kDefaultEta);

struct CauseCount {
  int total = 0;
  int correct = 0;
};

struct RecallResult {
  int total = 0;
  int correct = 0;
  double recall = 0.0;
  std::map<std::string, CauseCount> per_cause;  // risk agent class, or "group"
};

/// Recall of planted risk objects. Scenarios with ground_truth_group are
/// scored by exact set match against identify_risk_group(eta); the others
/// by predicted_risk. Gated-out scenarios count as misses. Throws
/// EvaluationError naming the scenario when it has no ground truth.
RecallResult evaluate_recall(const std::vector<Scenario>& scenarios, const std::vector<std::string>& names,
                             const Model& model, double delta = kDefaultDelta, double eta = kDefaultEta,
                             int threads = 1);

/// Loads the test split of a manifest and calls the overload above.
RecallResult evaluate_recall(const DatasetManifest& manifest, const Model& model, double delta = kDefaultDelta,
                             double eta = kDefaultEta, int threads = 1);

nlohmann::json risk_report_to_json(const RiskReport& r);
nlohmann::json recall_to_json(const RecallResult& r);

}  // namespace riskgraph
