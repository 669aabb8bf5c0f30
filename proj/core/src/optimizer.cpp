#include "riskgraph/optimizer.hpp"

#include <cmath>
#include <vector>

#include "riskgraph/errors.hpp"

namespace riskgraph {

void adam_step(Weights& params, const Weights& grads, OptimizerState& state, const AdamConfig& config) {
  if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradient");
  const Eigen::Index count = params.parameter_count();
  if (grads.parameter_count() != count || state.first_moment.parameter_count() != count ||
      state.second_moment.parameter_count() != count) {
    throw ShapeError("adam_step: gradient or optimizer state does not match the parameters");
  }

  std::vector<const Eigen::MatrixXd::Scalar*> g;
  std::vector<double*> m, v;
  Weights::visit(grads, [&](const std::string&, const auto& t) { g.push_back(t.data()); });
  Weights::visit(state.first_moment, [&](const std::string&, auto& t) { m.push_back(t.data()); });
  Weights::visit(state.second_moment, [&](const std::string&, auto& t) { v.push_back(t.data()); });

  ++state.step;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  Weights::visit(params, [&](const std::string& name, auto& p) {
    if (k >= g.size()) throw ShapeError("adam_step: gradient is missing tensor " + name);
    double* pd = p.data();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      m[k][i] = config.beta1 * m[k][i] + (1.0 - config.beta1) * g[k][i];
      v[k][i] = config.beta2 * v[k][i] + (1.0 - config.beta2) * g[k][i] * g[k][i];
      const double m_hat = m[k][i] / correction1;
      const double v_hat = v[k][i] / correction2;
      pd[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    ++k;
  });
}

}  // namespace riskgraph
