#include "riskgraph/risk.hpp"

#include <algorithm>

#include "parallel.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/graph.hpp"
#include "riskgraph/scenario_io.hpp"
#include "riskgraph/stgcn.hpp"

namespace riskgraph {

namespace {

constexpr int kGo = 0;
constexpr int kStop = 1;

void require_go_stop(const ModelConfig& c) {
  if (c.class_names != std::vector<std::string>{"Go", "Stop"}) {
    throw ConfigError("risk inference needs a model with classes [Go, Stop]");
  }
}

double go_probability(const Scenario& s, const Model& model) { return forward(s, model, Mode::Eval)[kGo]; }

}  // namespace

BehaviorPrediction predict_behavior(const Scenario& s, const Model& model) {
  require_go_stop(model.config);
  const Eigen::VectorXd p = forward(s, model, Mode::Eval);
  return {p[kGo], p[kStop]};
}

RiskReport risk_scores(const Scenario& s, const Model& model, double delta, int threads) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must be in (0, 1)");
  RiskReport report;
  report.delta = delta;
  report.stop_prob = predict_behavior(s, model).stop;
  report.gated_in = report.stop_prob >= delta;
  if (!report.gated_in) return report;
  if (s.agents.empty()) {
    report.empty_intervention = true;
    return report;
  }

  std::vector<double> scores(s.agents.size());
  detail::parallel_for(static_cast<int>(s.agents.size()), threads, [&](int i) {
    scores[static_cast<std::size_t>(i)] = go_probability(mask_agent(s, s.agents[static_cast<std::size_t>(i)].agent_id), model);
  });
  for (std::size_t i = 0; i < s.agents.size(); ++i) report.scores[s.agents[i].agent_id] = scores[i];

  for (const auto& [id, score] : report.scores) report.ranking.push_back(id);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](int a, int b) { return report.scores.at(a) > report.scores.at(b); });
  report.predicted_risk = report.ranking.front();
  return report;
}

double group_risk_score(const Scenario& s, const Model& model, const std::set<int>& group) {
  require_go_stop(model.config);
  if (group.empty()) throw ConfigError("risk group is empty");
  return go_probability(mask_group(s, group), model);
}

std::set<int> identify_risk_group(const Scenario& s, const Model& model, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must be in [0, 1]");
  const ForwardTrace trace = forward_trace(s, model, Mode::Eval);
  std::set<int> group;
  for (const auto& [id, value] : ego_interaction_profile(trace.adjacency.front())) {
    if (value > eta) group.insert(id);
  }
  return group;
}

RecallResult evaluate_recall(const std::vector<Scenario>& scenarios, const std::vector<std::string>& names,
                             const Model& model, double delta, double eta, int threads) {
  if (names.size() != scenarios.size()) throw ShapeError("evaluate_recall: one name per scenario is required");
  require_go_stop(model.config);
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (!scenarios[i].ground_truth_risk && !scenarios[i].ground_truth_group) {
      throw EvaluationError(names[i] + ": scenario has no ground-truth risk annotation");
    }
  }

  std::vector<bool> hit(scenarios.size(), false);
  // Parallelism runs over scenarios; each report is computed serially.
  detail::parallel_for(static_cast<int>(scenarios.size()), threads, [&](int i) {
    const Scenario& s = scenarios[static_cast<std::size_t>(i)];
    if (s.ground_truth_group) {
      if (predict_behavior(s, model).stop < delta) return;
      const std::set<int> truth(s.ground_truth_group->begin(), s.ground_truth_group->end());
      hit[static_cast<std::size_t>(i)] = identify_risk_group(s, model, eta) == truth;
    } else {
      const RiskReport r = risk_scores(s, model, delta, 1);
      hit[static_cast<std::size_t>(i)] = r.predicted_risk && *r.predicted_risk == *s.ground_truth_risk;
    }
  });

  RecallResult out;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const Scenario& s = scenarios[i];
    std::string cause = "group";
    if (!s.ground_truth_group) cause = std::string(to_string(s.find_agent(*s.ground_truth_risk)->cls));
    auto& c = out.per_cause[cause];
    ++c.total;
    ++out.total;
    if (hit[i]) {
      ++c.correct;
      ++out.correct;
    }
  }
  out.recall = out.total > 0 ? static_cast<double>(out.correct) / out.total : 0.0;
  return out;
}

RecallResult evaluate_recall(const DatasetManifest& manifest, const Model& model, double delta, double eta,
                             int threads) {
  std::vector<Scenario> scenarios;
  std::vector<std::string> names;
  for (const auto& path : manifest.resolve(manifest.test)) {
    scenarios.push_back(load_scenario(path));
    names.push_back(path.string());
  }
  return evaluate_recall(scenarios, names, model, delta, eta, threads);
}

nlohmann::json risk_report_to_json(const RiskReport& r) {
  nlohmann::json j{{"stop_prob", r.stop_prob}, {"delta", r.delta}, {"gated_in", r.gated_in}};
  if (!r.gated_in) j["note"] = "no risk inference performed";
  if (r.empty_intervention) j["warning"] = "empty intervention: the scenario has no agents";
  if (r.gated_in && !r.empty_intervention) {
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [id, s] : r.scores) scores[std::to_string(id)] = s;
    j["scores"] = std::move(scores);
    j["ranking"] = r.ranking;
    j["predicted_risk"] = *r.predicted_risk;
  }
  if (r.group) {
    nlohmann::json g{{"members", r.group->members}, {"score", r.group->score}};
    g["eta"] = r.group->explicit_group ? nlohmann::json(nullptr) : nlohmann::json(r.group->eta);
    j["group"] = std::move(g);
  }
  return j;
}

nlohmann::json recall_to_json(const RecallResult& r) {
  nlohmann::json causes = nlohmann::json::object();
  for (const auto& [name, c] : r.per_cause) {
    causes[name] = {{"total", c.total},
                    {"correct", c.correct},
                    {"recall", c.total > 0 ? static_cast<double>(c.correct) / c.total : 0.0}};
  }
  return {{"total", r.total}, {"correct", r.correct}, {"recall", r.recall}, {"per_cause", std::move(causes)}};
}

}  // namespace riskgraph
