#include "riskgraph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskgraph/random.hpp"

namespace riskgraph {

namespace {

struct Flat {
  std::string name;
  double* data;
  Eigen::Index size;
};

std::vector<Flat> flatten(Weights& w) {
  std::vector<Flat> out;
  Weights::visit(w, [&](const std::string& name, auto& t) { out.push_back({name, t.data(), t.size()}); });
  return out;
}

struct Probe {
  double loss;
  std::vector<std::uint8_t> pattern;
};

Probe evaluate(const Model& model, std::span<const Scenario* const> batch, std::span<const int> labels,
               Mode mode) {
  BatchOptions opts;
  opts.mode = mode;
  opts.compute_gradients = false;
  opts.record_activation_pattern = true;
  BatchResult r = forward_backward(batch, labels, model, opts);
  return {r.loss, std::move(r.activation_pattern)};
}

// A ReLU switching anywhere in [x - margin, x + margin] marks the coordinate
// as kink-adjacent.
constexpr double kKinkMargin = 10.0;

}  // namespace

GradCheckReport compare_gradients(const Model& model, std::span<const Scenario* const> batch,
                                  std::span<const int> labels, const Weights& analytic,
                                  const GradCheckOptions& options) {
  Model probe = model;
  auto params = flatten(probe.weights);
  Weights grads = analytic;
  auto ga = flatten(grads);

  const Probe base = evaluate(probe, batch, labels, options.mode);
  const double h = options.step;
  Rng rng(options.sample_seed);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    TensorCheck tc;
    tc.name = params[k].name;
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(params[k].size));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_coords_per_tensor > 0 &&
        coords.size() > static_cast<std::size_t>(options.max_coords_per_tensor)) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(options.max_coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    for (Eigen::Index i : coords) {
      double& x = params[k].data[i];
      const double saved = x;
      bool kink = false;
      for (double sign : {1.0, -1.0}) {
        x = saved + sign * kKinkMargin * h;
        if (evaluate(probe, batch, labels, options.mode).pattern != base.pattern) kink = true;
      }
      if (kink) {
        x = saved;
        ++tc.skipped;
        continue;
      }
      x = saved + h;
      const double up = evaluate(probe, batch, labels, options.mode).loss;
      x = saved - h;
      const double down = evaluate(probe, batch, labels, options.mode).loss;
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = ga[k].data[i];
      const double denom = std::max({std::abs(an), std::abs(fd), options.floor});
      const double rel = std::abs(an - fd) / denom;
      tc.max_rel_error = std::max(tc.max_rel_error, rel);
      ++tc.checked;
    }
    tc.pass = tc.max_rel_error < options.tolerance;
    report.checked += tc.checked;
    report.skipped_kink_coords += tc.skipped;
    if (tc.checked > 0 && (report.worst_tensor.empty() || tc.max_rel_error > report.max_rel_error)) {
      report.max_rel_error = tc.max_rel_error;
      report.worst_tensor = tc.name;
    }
    report.pass = report.pass && tc.pass;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

GradCheckReport grad_check(const Model& model, std::span<const Scenario* const> batch,
                           std::span<const int> labels, const GradCheckOptions& options) {
  BatchOptions opts;
  opts.mode = options.mode;
  opts.compute_gradients = true;
  const BatchResult r = forward_backward(batch, labels, model, opts);
  return compare_gradients(model, batch, labels, r.gradients, options);
}

std::vector<Scenario> reference_scenarios(int count, int gamma, int agents, int feature_dim,
                                          std::uint64_t seed) {
  Rng rng(seed);
  const AgentClass classes[] = {AgentClass::Person, AgentClass::Car, AgentClass::Bicycle,
                                AgentClass::Truck};
  auto random_vec = [&](double scale) {
    Eigen::VectorXd v(feature_dim);
    for (int f = 0; f < feature_dim; ++f) v[f] = rng.normal(0.0, scale);
    return v;
  };
  std::vector<Scenario> out;
  for (int n = 0; n < count; ++n) {
    Scenario s;
    s.gamma = gamma;
    s.ego_feature = random_vec(1.0);
    for (int t = 0; t < gamma; ++t) s.context.push_back(random_vec(0.3));
    for (int a = 0; a < agents; ++a) {
      Agent agent;
      agent.agent_id = a + 1;
      agent.cls = classes[(a + n) % 4];
      agent.presence.assign(static_cast<std::size_t>(gamma), true);
      // The last agent of every other clip leaves early to exercise masking.
      if (a == agents - 1 && n % 2 == 1 && gamma > 1) agent.presence.back() = false;
      const Eigen::VectorXd base = random_vec(1.0);
      double x = rng.uniform(-1.5, 1.5);
      double z = rng.uniform(0.8, 2.2);
      const double vx = rng.uniform(-0.2, 0.2);
      const double vz = rng.uniform(-0.1, 0.1);
      for (int t = 0; t < gamma; ++t) {
        if (!agent.presence[static_cast<std::size_t>(t)]) continue;
        AgentFrameState st;
        st.t = t;
        st.position = {x + vx * t, 0.0, z + vz * t};
        st.appearance = base + random_vec(0.1);
        agent.states.push_back(std::move(st));
      }
      s.agents.push_back(std::move(agent));
    }
    s.label = n % 2 == 0 ? "Stop" : "Go";
    out.push_back(std::move(s));
  }
  return out;
}

ModelConfig reference_model_config(int width) {
  ModelConfig c;
  c.feature_dim = width;
  c.hidden = width;
  c.embed = width;
  c.layers = 3;
  c.tau = 3;
  return c;
}

nlohmann::json gradcheck_report_to_json(const GradCheckReport& report) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : report.tensors) {
    tensors.push_back({{"name", t.name},
                       {"checked", t.checked},
                       {"skipped", t.skipped},
                       {"max_rel_error", t.max_rel_error},
                       {"pass", t.pass}});
  }
  return {{"pass", report.pass},
          {"max_rel_error", report.max_rel_error},
          {"worst_tensor", report.worst_tensor},
          {"checked", report.checked},
          {"skipped_kink_coords", report.skipped_kink_coords},
          {"tensors", std::move(tensors)}};
}

}  // namespace riskgraph
