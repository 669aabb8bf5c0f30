#include <benchmark/benchmark.h>

#include <vector>

#include "riskgraph/graph.hpp"
#include "riskgraph/model.hpp"
#include "riskgraph/risk.hpp"
#include "riskgraph/stgcn.hpp"

namespace rg = riskgraph;

namespace {

std::vector<rg::Scenario> clips(int count, int agents) {
  rg::GeneratorConfig cfg;
  cfg.min_agents = agents;
  cfg.max_agents = agents;
  std::vector<rg::Scenario> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(rg::generate_scenario(cfg, 100 + i, i % 2 ? rg::ScenarioKind::Stop : rg::ScenarioKind::Go));
  }
  return out;
}

void BM_BuildAdjacency(benchmark::State& state) {
  const auto s = clips(1, static_cast<int>(state.range(0))).front();
  const rg::Model m = rg::init_model(rg::ModelConfig{}, 1);
  const rg::NodeSet nodes = rg::make_node_set(s);
  std::vector<Eigen::MatrixXd> features(s.gamma, Eigen::MatrixXd::Random(nodes.nodes(), m.config.hidden));
  const auto& layer = m.weights.layers.front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(rg::build_adjacency(nodes, features, m.weights.edge, layer.phi, layer.omega, m.config.mu));
  }
}
BENCHMARK(BM_BuildAdjacency)->Arg(1)->Arg(5)->Arg(10);

void BM_Forward(benchmark::State& state) {
  const auto s = clips(1, static_cast<int>(state.range(0))).front();
  const rg::Model m = rg::init_model(rg::ModelConfig{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(rg::forward(s, m));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(5)->Arg(10);

void BM_ForwardBackward(benchmark::State& state) {
  const auto set = clips(static_cast<int>(state.range(0)), 5);
  std::vector<const rg::Scenario*> batch;
  std::vector<int> labels;
  for (const auto& s : set) {
    batch.push_back(&s);
    labels.push_back(s.label == "Stop" ? 1 : 0);
  }
  const rg::Model m = rg::init_model(rg::ModelConfig{}, 1);
  rg::BatchOptions opts;
  opts.threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(rg::forward_backward(batch, labels, m, opts));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Args({8, 1})->Args({8, 4});

void BM_RiskScores(benchmark::State& state) {
  const auto s = clips(1, static_cast<int>(state.range(0))).front();
  rg::Model m = rg::init_model(rg::ModelConfig{}, 1);
  m.weights.fc_bias << -5.0, 5.0;  // keep the gate open
  for (auto _ : state) benchmark::DoNotOptimize(rg::risk_scores(s, m, 0.5));
}
BENCHMARK(BM_RiskScores)->Arg(5)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
