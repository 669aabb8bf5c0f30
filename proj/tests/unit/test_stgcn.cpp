#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "builders.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/gradcheck.hpp"
#include "riskgraph/optimizer.hpp"
#include "riskgraph/scenario_io.hpp"
#include "riskgraph/stgcn.hpp"
#include "riskgraph/train.hpp"

namespace rg = riskgraph;
using namespace testing_support;

namespace {

rg::ModelConfig small_config(int width = 6) {
  rg::ModelConfig c;
  c.feature_dim = width;
  c.hidden = width;
  c.embed = width;
  return c;
}

std::vector<const rg::Scenario*> pointers(const std::vector<rg::Scenario>& v) {
  std::vector<const rg::Scenario*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Softmax, SumsToOne) {
  rg::Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd p = rg::softmax(random_vector(rng, 4, 20.0));
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_LE(rg::cross_entropy(Eigen::Vector2d(1.0, 0.0), 0), 1e-12);
  EXPECT_NEAR(rg::cross_entropy(Eigen::Vector2d(0.5, 0.5), 1), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(rg::cross_entropy(Eigen::Vector2d(1.0, 0.0), 1), -std::log(rg::kProbabilityFloor), 1e-9);
  EXPECT_THROW(rg::cross_entropy(Eigen::Vector2d(0.5, 0.5), 2), rg::ConfigError);
  EXPECT_THROW(rg::cross_entropy(Eigen::Vector2d(0.5, 0.5), -1), rg::ConfigError);
}

TEST(SpatialConv, Examples) {
  rg::Rng rng(2);
  const Eigen::MatrixXd x = random_vector(rng, 12).cwiseAbs().reshaped(3, 4);
  EXPECT_TRUE(rg::spatial_conv(Eigen::MatrixXd::Identity(3, 3), x, Eigen::MatrixXd::Identity(4, 4)).isApprox(x));
  Eigen::MatrixXd same(2, 4);
  same.row(0) = same.row(1) = random_vector(rng, 4).transpose();
  const Eigen::MatrixXd out =
      rg::spatial_conv(Eigen::MatrixXd::Constant(2, 2, 0.5), same, Eigen::MatrixXd::Identity(4, 4));
  EXPECT_EQ(out.row(0), out.row(1));
  EXPECT_EQ(rg::spatial_conv(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Zero(3, 4),
                             Eigen::MatrixXd::Random(4, 4)),
            Eigen::MatrixXd::Zero(3, 4));
  EXPECT_THROW(rg::spatial_conv(Eigen::MatrixXd::Identity(2, 2), x, Eigen::MatrixXd::Identity(4, 4)), rg::ShapeError);
}

namespace {

struct TemporalCase {
  std::vector<Eigen::MatrixXd> spatial, residual;
  std::vector<std::vector<bool>> present;
  std::vector<bool> vulnerable{false, true};
};

TemporalCase temporal_case(int gamma, rg::Rng& rng) {
  TemporalCase c;
  for (int t = 0; t < gamma; ++t) {
    c.spatial.push_back(random_vector(rng, 8).cwiseAbs().reshaped(2, 4));
    c.residual.push_back(random_vector(rng, 8).reshaped(2, 4));
    c.present.push_back({true, true});
  }
  return c;
}

}  // namespace

TEST(TemporalConv, ZeroKernelsLeaveResidual) {
  rg::Rng rng(3);
  auto c = temporal_case(5, rng);
  const std::vector<Eigen::MatrixXd> zero(6, Eigen::MatrixXd::Zero(4, 4));
  const auto out = rg::temporal_conv(c.spatial, zero, c.vulnerable, c.residual, c.present);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(out[t], c.residual[t].cwiseMax(0.0));
}

TEST(TemporalConv, CenterTapIsIdentity) {
  rg::Rng rng(4);
  auto c = temporal_case(5, rng);
  std::vector<Eigen::MatrixXd> k(6, Eigen::MatrixXd::Zero(4, 4));
  k[2] = k[3] = Eigen::MatrixXd::Identity(4, 4);  // offset index 1 is the center for tau = 3
  std::vector<Eigen::MatrixXd> zero_res(5, Eigen::MatrixXd::Zero(2, 4));
  const auto out = rg::temporal_conv(c.spatial, k, c.vulnerable, zero_res, c.present);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(out[t], c.spatial[t]);
}

TEST(TemporalConv, BruteForceWithAbsentNeighbour) {
  rg::Rng rng(5);
  auto c = temporal_case(3, rng);
  // Node 1 absent at frame 1: its spatial features there are zero.
  c.present[1][1] = false;
  c.spatial[1].row(1).setZero();
  std::vector<Eigen::MatrixXd> k;
  for (int i = 0; i < 6; ++i) k.push_back(random_vector(rng, 16).reshaped(4, 4));
  const auto out = rg::temporal_conv(c.spatial, k, c.vulnerable, c.residual, c.present);
  for (int t = 0; t < 3; ++t) {
    for (int n = 0; n < 2; ++n) {
      if (!c.present[t][n]) {
        EXPECT_EQ(out[t].row(n).cwiseAbs().sum(), 0.0);
        continue;
      }
      Eigen::RowVectorXd sum = c.residual[t].row(n);
      for (int o = 0; o < 3; ++o) {
        const int src = t + o - 1;
        if (src < 0 || src >= 3) continue;
        sum += c.spatial[src].row(n) * k[o * 2 + (c.vulnerable[n] ? 1 : 0)];
      }
      EXPECT_LT((out[t].row(n) - sum.cwiseMax(0.0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(InitModel, ShapesBoundsAndDeterminism) {
  rg::ModelConfig c;
  const rg::Model m = rg::init_model(c, 5);
  ASSERT_EQ(m.weights.layers.size(), 3u);
  for (const auto& layer : m.weights.layers) {
    EXPECT_EQ(layer.spatial.rows(), 16);
    EXPECT_EQ(layer.spatial.cols(), 16);
    ASSERT_EQ(layer.temporal.size(), 6u);
    for (const auto& k : layer.temporal) EXPECT_EQ(k.rows(), 16);
    EXPECT_LE(layer.spatial.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
    EXPECT_EQ(layer.phi.cols(), 256);
  }
  EXPECT_EQ(m.weights.edge.fourier.rows(), 30);
  EXPECT_EQ(m.weights.edge.fourier.cols(), 5);
  EXPECT_LE(m.weights.input.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
  const rg::Model again = rg::init_model(c, 5);
  EXPECT_EQ(m.weights.input, again.weights.input);
  EXPECT_EQ(m.weights.edge.fourier, again.weights.edge.fourier);
  EXPECT_NE(rg::init_model(c, 6).weights.input, m.weights.input);
}

TEST(InitModel, InvalidConfig) {
  rg::ModelConfig c;
  c.tau = 2;
  EXPECT_THROW(rg::init_model(c, 1), rg::ConfigError);
  c.tau = 3;
  c.hidden = 0;
  EXPECT_THROW(rg::init_model(c, 1), rg::ConfigError);
}

TEST(Forward, ProbabilitiesAndDeterminism) {
  const rg::Model m = rg::init_model(small_config(), 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_scenario(5, 6, 3, 3.0, seed);
    const Eigen::VectorXd p = rg::forward(s, m);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    EXPECT_GT(p.minCoeff(), 0.0);
    EXPECT_LT(p.maxCoeff(), 1.0);
    EXPECT_EQ(p, rg::forward(s, m));
  }
}

TEST(Forward, ShapeErrors) {
  const rg::Model m = rg::init_model(small_config(), 3);
  EXPECT_THROW(rg::forward(random_scenario(5, 4, 2, 3.0, 1), m), rg::ShapeError);
  EXPECT_THROW(rg::forward(random_scenario(2, 6, 2, 3.0, 1), m), rg::ShapeError);
}

TEST(Forward, AgentOrderInvariant) {
  const rg::Model m = rg::init_model(small_config(), 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = random_scenario(5, 6, 4, 3.0, seed);
    auto shuffled = s;
    rg::Rng rng(seed);
    rng.shuffle(shuffled.agents);
    EXPECT_LT(max_abs_diff(rg::forward(s, m), rg::forward(shuffled, m)), 1e-12);
  }
}

TEST(Forward, MaskEqualsAuthoredScenario) {
  const rg::Model m = rg::init_model(small_config(), 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_scenario(5, 6, 3, 3.0, seed);
    const int id = s.agents[seed % 3].agent_id;
    auto j = rg::scenario_to_json(s);
    auto& agents = j["agents"];
    agents.erase(agents.begin() + static_cast<long>(seed % 3));
    const rg::Scenario authored = rg::scenario_from_json(j);
    EXPECT_LT(max_abs_diff(rg::forward(rg::mask_agent(s, id), m), rg::forward(authored, m)), 1e-12);
  }
}

TEST(Backward, HeadGradientOnSingleNode) {
  rg::ModelConfig c = small_config(2);
  c.tau = 1;
  c.norm = rg::NormMode::None;
  rg::Model m = rg::init_model(c, 8);
  m.weights.fc = Eigen::MatrixXd::Identity(2, 2);
  m.weights.fc_bias.setZero();
  const rg::Scenario s = empty_scenario(1, 2, 4);
  const std::vector<const rg::Scenario*> batch{&s};
  const std::vector<int> labels{1};
  const auto r = rg::forward_backward(batch, labels, m, {});
  const Eigen::VectorXd residual = r.probs[0] - Eigen::Vector2d(0, 1);
  EXPECT_LT(max_abs_diff(r.gradients.fc_bias, residual), 1e-15);
  // With an identity head the pooled features are the logits; compare the
  // gradient rows with (p - onehot) times the pooled vector via the log-odds.
  const Eigen::VectorXd pooled0 = r.gradients.fc.row(0).transpose() / residual[0];
  const Eigen::VectorXd pooled1 = r.gradients.fc.row(1).transpose() / residual[1];
  EXPECT_LT(max_abs_diff(pooled0, pooled1), 1e-12);
  EXPECT_NEAR(pooled0[0] - pooled0[1], std::log(r.probs[0][0] / r.probs[0][1]), 1e-12);
}

TEST(Backward, ZeroSignalGivesZeroGradient) {
  rg::ModelConfig c = small_config();
  rg::Model m = rg::init_model(c, 8);
  // A huge bias saturates the softmax so p[label] rounds to exactly 1.
  m.weights.fc_bias << 1e6, -1e6;
  const auto s = random_scenario(4, 6, 2, 2.0, 3);
  const std::vector<const rg::Scenario*> batch{&s, &s};
  const std::vector<int> labels{0, 0};
  const auto r = rg::forward_backward(batch, labels, m, {});
  double max_grad = 0.0;
  rg::Weights::visit(r.gradients, [&](const std::string&, const auto& t) {
    max_grad = std::max(max_grad, t.cwiseAbs().maxCoeff());
  });
  EXPECT_EQ(max_grad, 0.0);
}

TEST(GradCheck, ReferenceModelThreeSeeds) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const rg::Model m = rg::init_model(rg::reference_model_config(8), seed);
    const auto scenarios = rg::reference_scenarios(2, 4, 2, 8, seed);
    const auto batch = pointers(scenarios);
    const std::vector<int> labels{1, 0};
    const auto report = rg::grad_check(m, batch, labels, {});
    EXPECT_TRUE(report.pass) << "seed " << seed << " worst " << report.worst_tensor << " " << report.max_rel_error;
    EXPECT_GT(report.checked, 1000);
  }
}

TEST(GradCheck, EvalModeAndNoNormalization) {
  rg::ModelConfig c = rg::reference_model_config(6);
  const auto scenarios = rg::reference_scenarios(2, 4, 2, 6, 17);
  const auto batch = pointers(scenarios);
  const std::vector<int> labels{0, 1};
  rg::GradCheckOptions o;
  o.mode = rg::Mode::Eval;
  EXPECT_TRUE(rg::grad_check(rg::init_model(c, 2), batch, labels, o).pass);
  c.norm = rg::NormMode::None;
  EXPECT_TRUE(rg::grad_check(rg::init_model(c, 2), batch, labels, {}).pass);
}

TEST(GradCheck, LinearRegimeIsNearExact) {
  // Ego-only clips with nonnegative weights keep every ReLU active, so the
  // network is linear up to the softmax.
  rg::ModelConfig c = rg::reference_model_config(4);
  c.norm = rg::NormMode::None;
  rg::Model m = rg::init_model(c, 3);
  rg::Weights::visit(m.weights, [](const std::string&, auto& t) { t = t.cwiseAbs(); });
  std::vector<rg::Scenario> clips;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    rg::Scenario s = empty_scenario(4, 4, seed);
    s.ego_feature = s.ego_feature.cwiseAbs();
    for (auto& ctx : s.context) ctx = ctx.cwiseAbs();
    clips.push_back(s);
  }
  const auto batch = pointers(clips);
  const std::vector<int> labels{0, 1};
  const auto report = rg::grad_check(m, batch, labels, {});
  EXPECT_EQ(report.skipped_kink_coords, 0);
  EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(GradCheck, CorruptedEntryIsFlagged) {
  const rg::Model m = rg::init_model(rg::reference_model_config(8), 1);
  const auto scenarios = rg::reference_scenarios(2, 4, 2, 8, 1);
  const auto batch = pointers(scenarios);
  const std::vector<int> labels{1, 0};
  rg::BatchResult r = rg::forward_backward(batch, labels, m, {});
  Eigen::MatrixXd& target = r.gradients.layers[1].spatial;
  Eigen::Index row = 0, col = 0;
  target.cwiseAbs().maxCoeff(&row, &col);
  target(row, col) *= 1.1;
  const auto report = rg::compare_gradients(m, batch, labels, r.gradients, {});
  EXPECT_FALSE(report.pass);
  EXPECT_EQ(report.worst_tensor, "layers[1].spatial");
  const auto json = rg::gradcheck_report_to_json(report);
  EXPECT_TRUE(json.contains("skipped_kink_coords"));
}

TEST(GradCheck, ThreadCountDoesNotChangeResults) {
  const rg::Model m = rg::init_model(small_config(), 1);
  std::vector<rg::Scenario> clips;
  for (std::uint64_t seed = 0; seed < 6; ++seed) clips.push_back(random_scenario(5, 6, 3, 3.0, seed));
  const auto batch = pointers(clips);
  const std::vector<int> labels{0, 1, 0, 1, 1, 0};
  rg::BatchOptions serial;
  rg::BatchOptions parallel;
  parallel.threads = 4;
  const auto a = rg::forward_backward(batch, labels, m, serial);
  const auto b = rg::forward_backward(batch, labels, m, parallel);
  EXPECT_EQ(a.loss, b.loss);
  std::vector<double> ga, gb;
  rg::Weights::visit(a.gradients, [&](const std::string&, const auto& t) { ga.insert(ga.end(), t.data(), t.data() + t.size()); });
  rg::Weights::visit(b.gradients, [&](const std::string&, const auto& t) { gb.insert(gb.end(), t.data(), t.data() + t.size()); });
  EXPECT_EQ(ga, gb);
}

TEST(Adam, SingleStepMatchesClosedForm) {
  rg::Model m = rg::init_model(small_config(), 1);
  const rg::Weights before = m.weights;
  rg::Weights g = m.weights.zeros_like();
  g.input(0, 0) = 0.3;
  g.fc_bias[1] = -2.0;
  auto state = rg::OptimizerState::zeros_like(m.weights);
  rg::adam_step(m.weights, g, state, {});
  EXPECT_EQ(state.step, 1);
  // After one bias-corrected step the update is lr * g / (|g| + eps).
  EXPECT_NEAR(m.weights.input(0, 0), before.input(0, 0) - 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(m.weights.fc_bias[1], before.fc_bias[1] + 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(m.weights.input(1, 1), before.input(1, 1));
  EXPECT_EQ(m.weights.edge.fourier, before.edge.fourier);
}

TEST(Adam, RejectsNonFinite) {
  rg::Model m = rg::init_model(small_config(), 1);
  rg::Weights g = m.weights.zeros_like();
  g.fc(0, 0) = std::nan("");
  auto state = rg::OptimizerState::zeros_like(m.weights);
  EXPECT_THROW(rg::adam_step(m.weights, g, state, {}), rg::NumericError);
}

TEST(Train, DeterministicAndStartsNearChance) {
  rg::GeneratorConfig gen;
  std::vector<rg::Scenario> set;
  for (int i = 0; i < 16; ++i) {
    set.push_back(rg::generate_scenario(gen, 500 + i, i % 2 ? rg::ScenarioKind::Stop : rg::ScenarioKind::Go));
  }
  rg::ModelConfig mc;
  mc.embed = 32;
  rg::TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 9;
  const auto a = rg::train(set, {}, mc, tc);
  const auto b = rg::train(set, {}, mc, tc);
  EXPECT_EQ(rg::history_to_json(a.history).dump(), rg::history_to_json(b.history).dump());
  EXPECT_EQ(a.model.weights.input, b.model.weights.input);
  EXPECT_EQ(a.model.running.temporal_var.back(), b.model.running.temporal_var.back());
  EXPECT_NEAR(a.history.front().train_loss, std::numbers::ln2, 0.25);
}

TEST(Train, Errors) {
  rg::ModelConfig mc = small_config();
  rg::TrainConfig tc;
  EXPECT_THROW(rg::train({}, {}, mc, tc), rg::TrainingError);
  tc.batch_size = 1;
  EXPECT_THROW(rg::train({random_scenario(4, 6, 1, 2.0, 1)}, {}, mc, tc), rg::ConfigError);
  tc.batch_size = 2;
  // Overflowing features make the appearance relation infinite.
  std::vector<rg::Scenario> set;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto s = random_scenario(4, 6, 2, 2.0, i);
    for (auto& a : s.agents) {
      for (auto& st : a.states) st.appearance *= 1e200;
    }
    set.push_back(s);
  }
  EXPECT_THROW(rg::train(set, {}, mc, tc), rg::TrainingError);
}
