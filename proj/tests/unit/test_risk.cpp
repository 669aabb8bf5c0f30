#include <gtest/gtest.h>

#include <algorithm>

#include "builders.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/risk.hpp"
#include "riskgraph/scenario_io.hpp"
#include "riskgraph/stgcn.hpp"
#include "riskgraph/train.hpp"

namespace rg = riskgraph;
using namespace testing_support;

namespace {

rg::Model small_model(std::uint64_t seed = 1) {
  rg::ModelConfig c;
  c.feature_dim = 6;
  c.hidden = 6;
  c.embed = 6;
  return rg::init_model(c, seed);
}

// The head ignores the features, so every forward pass returns the same
// probabilities: P(Stop) = sigmoid(2 * bias).
rg::Model constant_model(double stop_logit) {
  rg::Model m = small_model();
  m.weights.fc.setZero();
  m.weights.fc_bias << -stop_logit, stop_logit;
  return m;
}

}  // namespace

TEST(PredictBehavior, SumsToOneAndRepeatable) {
  const auto m = small_model();
  const auto s = random_scenario(5, 6, 3, 3.0, 2);
  const auto p = rg::predict_behavior(s, m);
  EXPECT_NEAR(p.go + p.stop, 1.0, 1e-9);
  const auto q = rg::predict_behavior(s, m);
  EXPECT_EQ(p.go, q.go);
  EXPECT_EQ(p.stop, q.stop);
}

TEST(PredictBehavior, RequiresGoStopClasses) {
  auto m = small_model();
  m.config.class_names = {"Stop", "Go"};
  EXPECT_THROW(rg::predict_behavior(random_scenario(5, 6, 1, 3.0, 2), m), rg::ConfigError);
}

TEST(RiskScores, GateBelowDelta) {
  const auto m = constant_model(-0.2);  // stop_prob ~ 0.4
  const auto r = rg::risk_scores(random_scenario(5, 6, 3, 3.0, 2), m, 0.5);
  EXPECT_LT(r.stop_prob, 0.5);
  EXPECT_FALSE(r.gated_in);
  EXPECT_TRUE(r.scores.empty());
  EXPECT_FALSE(r.predicted_risk.has_value());
  const auto j = rg::risk_report_to_json(r);
  EXPECT_FALSE(j.contains("scores"));
}

TEST(RiskScores, GateIsInclusive) {
  const auto m = constant_model(0.0);  // stop_prob == 0.5 exactly
  const auto r = rg::risk_scores(random_scenario(5, 6, 2, 3.0, 2), m, 0.5);
  EXPECT_EQ(r.stop_prob, 0.5);
  EXPECT_TRUE(r.gated_in);
  EXPECT_EQ(r.scores.size(), 2u);
}

TEST(RiskScores, InvalidDelta) {
  const auto m = small_model();
  const auto s = random_scenario(5, 6, 1, 3.0, 2);
  EXPECT_THROW(rg::risk_scores(s, m, 0.0), rg::ConfigError);
  EXPECT_THROW(rg::risk_scores(s, m, 1.0), rg::ConfigError);
}

TEST(RiskScores, TiesGoToSmallestId) {
  const auto m = constant_model(2.0);
  const auto s = random_scenario(5, 6, 4, 3.0, 3);
  const auto r = rg::risk_scores(s, m, 0.5);
  std::vector<int> ids;
  for (const auto& a : s.agents) ids.push_back(a.agent_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(r.ranking, ids);
  EXPECT_EQ(r.predicted_risk, ids.front());
}

TEST(RiskScores, EmptyInterventionWarns) {
  const auto m = constant_model(2.0);
  const auto r = rg::risk_scores(empty_scenario(5, 6), m, 0.5);
  EXPECT_TRUE(r.gated_in);
  EXPECT_TRUE(r.empty_intervention);
  EXPECT_TRUE(r.scores.empty());
  EXPECT_TRUE(rg::risk_report_to_json(r).contains("warning"));
}

class TrainedLikeModel : public ::testing::Test {
 protected:
  void SetUp() override {
    model = small_model(4);
    // Push the prior toward Stop so the gate opens for random clips.
    model.weights.fc_bias << -3.0, 3.0;
    scenario = random_scenario(5, 6, 4, 2.5, 8);
  }
  rg::Model model;
  rg::Scenario scenario;
};

TEST_F(TrainedLikeModel, ScoresAndRankingContract) {
  const auto r = rg::risk_scores(scenario, model, 0.5);
  ASSERT_TRUE(r.gated_in);
  ASSERT_EQ(r.scores.size(), scenario.agents.size());
  for (const auto& [id, s] : r.scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  for (std::size_t i = 1; i < r.ranking.size(); ++i) {
    EXPECT_GE(r.scores.at(r.ranking[i - 1]), r.scores.at(r.ranking[i]));
  }
  double best = 0.0;
  for (const auto& [id, s] : r.scores) best = std::max(best, s);
  EXPECT_EQ(r.scores.at(*r.predicted_risk), best);
}

TEST_F(TrainedLikeModel, ScoresMatchAuthoredScenarios) {
  const auto r = rg::risk_scores(scenario, model, 0.5);
  const auto base = rg::scenario_to_json(scenario);
  for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
    auto j = base;
    j["agents"].erase(j["agents"].begin() + static_cast<long>(i));
    const double go = rg::forward(rg::scenario_from_json(j), model)[0];
    EXPECT_NEAR(r.scores.at(scenario.agents[i].agent_id), go, 1e-12);
  }
}

TEST_F(TrainedLikeModel, ThreadCountDoesNotMatter) {
  const auto a = rg::risk_scores(scenario, model, 0.5, 1);
  const auto b = rg::risk_scores(scenario, model, 0.5, 4);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.ranking, b.ranking);
}

TEST_F(TrainedLikeModel, GroupScores) {
  const auto r = rg::risk_scores(scenario, model, 0.5);
  for (const auto& a : scenario.agents) {
    EXPECT_EQ(rg::group_risk_score(scenario, model, {a.agent_id}), r.scores.at(a.agent_id));
  }
  std::set<int> all;
  for (const auto& a : scenario.agents) all.insert(a.agent_id);
  rg::Scenario ego_only = scenario;
  ego_only.agents.clear();
  EXPECT_EQ(rg::group_risk_score(scenario, model, all), rg::forward(ego_only, model)[0]);
  EXPECT_THROW(rg::group_risk_score(scenario, model, {12345}), rg::NotFoundError);
  EXPECT_THROW(rg::group_risk_score(scenario, model, {}), rg::ConfigError);
}

TEST_F(TrainedLikeModel, GroupThreshold) {
  EXPECT_TRUE(rg::identify_risk_group(scenario, model, 1.0).empty());
  const auto trace = rg::forward_trace(scenario, model);
  std::set<int> linked;
  for (const auto& [id, v] : rg::ego_interaction_profile(trace.adjacency.front())) {
    if (v > 0.0) linked.insert(id);
  }
  EXPECT_EQ(rg::identify_risk_group(scenario, model, 0.0), linked);
  EXPECT_FALSE(linked.empty());
  EXPECT_THROW(rg::identify_risk_group(scenario, model, 1.5), rg::ConfigError);
}

TEST(Recall, PerfectAndGatedOut) {
  auto s = random_scenario(5, 6, 3, 3.0, 5);
  int smallest = s.agents.front().agent_id;
  for (const auto& a : s.agents) smallest = std::min(smallest, a.agent_id);
  s.ground_truth_risk = smallest;
  const std::vector<rg::Scenario> set{s};
  const std::vector<std::string> names{"one.json"};
  const auto hit = rg::evaluate_recall(set, names, constant_model(2.0), 0.5);
  EXPECT_EQ(hit.total, 1);
  EXPECT_EQ(hit.correct, 1);
  EXPECT_EQ(hit.recall, 1.0);
  const auto miss = rg::evaluate_recall(set, names, constant_model(-2.0), 0.5);
  EXPECT_EQ(miss.correct, 0);
  EXPECT_EQ(miss.recall, 0.0);
  const std::string cls(rg::to_string(s.find_agent(smallest)->cls));
  EXPECT_EQ(miss.per_cause.at(cls).total, 1);
}

TEST(Recall, GroupsNeedExactMatch) {
  rg::Scenario s = empty_scenario(4, 6);
  rg::Rng rng(2);
  const std::vector<std::optional<rg::Point3>> near(4, rg::Point3{0.5, 0, 1.0});
  const std::vector<std::optional<rg::Point3>> far(4, rg::Point3{6.0, 0, 6.0});
  add_agent(s, 1, rg::AgentClass::Person, near, rng);
  add_agent(s, 2, rg::AgentClass::Person, near, rng);
  add_agent(s, 3, rg::AgentClass::Car, far, rng);
  const auto m = constant_model(2.0);
  const auto members = rg::identify_risk_group(s, m, 0.0);
  EXPECT_EQ(members, (std::set<int>{1, 2}));
  s.ground_truth_group = std::vector<int>{1, 2};
  const std::vector<std::string> names{"g.json"};
  EXPECT_EQ(rg::evaluate_recall({s}, names, m, 0.5, 0.0).correct, 1);
  s.ground_truth_group = std::vector<int>{1};
  const auto r = rg::evaluate_recall({s}, names, m, 0.5, 0.0);
  EXPECT_EQ(r.correct, 0);
  EXPECT_EQ(r.per_cause.at("group").total, 1);
}

TEST(Recall, MissingGroundTruthNamesFile) {
  const std::vector<rg::Scenario> set{random_scenario(5, 6, 2, 3.0, 1)};
  try {
    rg::evaluate_recall(set, {"scenario_00042.json"}, small_model(), 0.5);
    FAIL() << "expected EvaluationError";
  } catch (const rg::EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("scenario_00042.json"), std::string::npos);
  }
}

TEST(RiskTrained, SoleCrossingAgentIsFlagged) {
  // A pedestrian crossing 1.2 m ahead of the ego forces Stop; removing it
  // must flip a trained model back to Go.
  rg::GeneratorConfig gen;
  std::vector<rg::Scenario> set;
  for (int i = 0; i < 64; ++i) {
    set.push_back(rg::generate_scenario(gen, 7000 + i, i % 2 ? rg::ScenarioKind::Stop : rg::ScenarioKind::Go));
  }
  rg::Scenario probe = set.front();
  probe.agents.clear();
  rg::Rng rng(3);
  std::vector<std::optional<rg::Point3>> path;
  for (int t = 0; t < probe.gamma; ++t) path.push_back(rg::Point3{0.4 * (t - 10), 0.0, 1.2});
  add_agent(probe, 5, rg::AgentClass::Person, path, rng);
  probe.label = "Stop";
  probe.ground_truth_risk.reset();
  probe.ground_truth_group.reset();
  ASSERT_TRUE(rg::apply_stop_rule(probe, gen.d_stop).stop);

  rg::ModelConfig mc;
  mc.embed = 64;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    rg::TrainConfig tc;
    tc.seed = seed;
    tc.epochs = 60;
    tc.early_stop_accuracy = 1.0;
    const auto model = rg::train(set, {}, mc, tc).model;
    const auto r = rg::risk_scores(probe, model, 0.5);
    EXPECT_LT(1.0 - r.stop_prob, 0.5) << "seed " << seed;
    ASSERT_TRUE(r.gated_in) << "seed " << seed;
    EXPECT_GT(r.scores.at(5), 0.5) << "seed " << seed;
  }
}
