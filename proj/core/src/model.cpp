#include "riskgraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "riskgraph/errors.hpp"
#include "riskgraph/random.hpp"

namespace riskgraph {

namespace {

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in) {
  const double bound = 1.0 / std::sqrt(fan_in);
  Eigen::MatrixXd m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

Eigen::VectorXd uniform_vector(Rng& rng, Eigen::Index size, double fan_in) {
  return uniform_matrix(rng, size, 1, fan_in);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (hidden < 1) fail("hidden must be >= 1");
  if (embed < 1) fail("embed must be >= 1");
  if (pos_embed < 1) fail("pos_embed must be >= 1");
  if (fourier_features < 1) fail("fourier_features must be >= 1");
  if (!(fourier_sigma > 0.0)) fail("fourier_sigma must be positive");
  if (!(mu > 0.0)) fail("mu must be positive");
  if (layers < 1) fail("layers must be >= 1");
  if (tau < 1 || tau % 2 == 0) fail("tau must be a positive odd number");
  if (class_names.size() < 2) fail("at least two classes are required");
  if (std::set<std::string>(class_names.begin(), class_names.end()).size() != class_names.size()) {
    fail("class names must be unique");
  }
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
  if (!(norm_momentum > 0.0) || norm_momentum > 1.0) fail("norm_momentum must be in (0, 1]");
}

int ModelConfig::class_index(const std::string& label) const {
  const auto it = std::find(class_names.begin(), class_names.end(), label);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

Weights Weights::zeros_like() const {
  Weights z = *this;
  z.edge.fourier.resize(0, 0);
  Weights::visit(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

Eigen::Index Weights::parameter_count() const {
  Eigen::Index n = 0;
  Weights::visit(*this, [&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

bool Weights::all_finite() const {
  bool ok = true;
  Weights::visit(*this, [&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

Weights& Weights::operator+=(const Weights& other) {
  std::vector<const double*> src;
  std::vector<Eigen::Index> sizes;
  Weights::visit(other, [&](const std::string&, const auto& t) {
    src.push_back(t.data());
    sizes.push_back(t.size());
  });
  std::size_t k = 0;
  Weights::visit(*this, [&](const std::string& name, auto& t) {
    if (t.size() != sizes[k]) throw ShapeError("weights: shape mismatch in " + name);
    t += Eigen::Map<const Eigen::MatrixXd>(src[k], t.rows(), t.cols());
    ++k;
  });
  return *this;
}

Weights& Weights::operator*=(double s) {
  Weights::visit(*this, [&](const std::string&, auto& t) { t *= s; });
  return *this;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int f = config.feature_dim;
  const int c = config.hidden;
  const int d = config.embed;
  const int e = config.pos_embed;
  const int k = config.fourier_features;

  Model model;
  model.config = config;
  model.seed = seed;
  Weights& w = model.weights;
  w.input = uniform_matrix(rng, f, c, f);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.phi = uniform_matrix(rng, c, d, c);
    layer.omega = uniform_matrix(rng, c, d, c);
    layer.spatial = uniform_matrix(rng, c, c, c);
    for (int o = 0; o < config.tau * 2; ++o) layer.temporal.push_back(uniform_matrix(rng, c, c, c));
    layer.spatial_scale = Eigen::VectorXd::Ones(c);
    layer.spatial_shift = Eigen::VectorXd::Zero(c);
    layer.temporal_scale = Eigen::VectorXd::Ones(c);
    layer.temporal_shift = Eigen::VectorXd::Zero(c);
    w.layers.push_back(std::move(layer));
  }
  for (int m = 0; m < 2; ++m) {
    w.edge.theta_w[m] = uniform_matrix(rng, 3, e, 3);
    w.edge.theta_b[m] = uniform_vector(rng, e, 3);
  }
  w.edge.w_p = uniform_vector(rng, 2 * k, 2 * k);
  w.edge.fourier.resize(k, e);
  for (Eigen::Index col = 0; col < e; ++col) {
    for (Eigen::Index row = 0; row < k; ++row) w.edge.fourier(row, col) = rng.normal(0.0, config.fourier_sigma);
  }
  w.fc = uniform_matrix(rng, config.num_classes(), c, c);
  w.fc_bias = uniform_vector(rng, config.num_classes(), c);

  for (int l = 0; l < config.layers; ++l) {
    model.running.spatial_mean.push_back(Eigen::VectorXd::Zero(c));
    model.running.spatial_var.push_back(Eigen::VectorXd::Ones(c));
    model.running.temporal_mean.push_back(Eigen::VectorXd::Zero(c));
    model.running.temporal_var.push_back(Eigen::VectorXd::Ones(c));
  }
  return model;
}

}  // namespace riskgraph
