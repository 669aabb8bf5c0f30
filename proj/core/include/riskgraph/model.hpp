#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace riskgraph {

enum class NormMode { None, Batch };

/// Architecture hyperconstants. Defaults follow the reference setup; tests
/// shrink widths.
struct ModelConfig {
  int feature_dim = 16;     // F, width of appearance/context vectors
  int hidden = 16;          // C, ST-GCN channel width
  int embed = 256;          // D, appearance embedding width
  int pos_embed = 5;        // d, position embedding width
  int fourier_features = 30;  // k
  double fourier_sigma = 10.0;
  double mu = 3.0;          // distance gate, meters
  int layers = 3;           // L
  int tau = 3;              // temporal kernel span, odd
  std::vector<std::string> class_names{"Go", "Stop"};
  NormMode norm = NormMode::Batch;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  /// Throws ConfigError on invalid dimensions.
  void validate() const;
  /// Index of a label string in class_names, or -1.
  int class_index(const std::string& label) const;
};

/// Parameters of the interaction edges that do not depend on the layer.
/// `fourier` is sampled once from N(0, sigma^2) and never trained.
struct EdgeParams {
  std::array<Eigen::MatrixXd, 2> theta_w;  // 3 x d, indexed by vulnerability bit
  std::array<Eigen::VectorXd, 2> theta_b;  // d
  Eigen::VectorXd w_p;                     // 2k readout
  Eigen::MatrixXd fourier;                 // k x d, frozen
};

struct LayerParams {
  Eigen::MatrixXd phi;    // C x D
  Eigen::MatrixXd omega;  // C x D
  Eigen::MatrixXd spatial;  // C x C
  // tau * 2 kernels of C x C; kernel for offset o (0..tau-1, centered at
  // tau/2) and vulnerability m sits at o * 2 + m.
  std::vector<Eigen::MatrixXd> temporal;
  Eigen::VectorXd spatial_scale, spatial_shift;    // normalization after G X W
  Eigen::VectorXd temporal_scale, temporal_shift;  // normalization after the temporal sum

  const Eigen::MatrixXd& kernel(int offset, bool vulnerable) const {
    return temporal[static_cast<std::size_t>(offset * 2 + (vulnerable ? 1 : 0))];
  }
};

/// Every trainable tensor. Also used as the gradient container.
struct Weights {
  Eigen::MatrixXd input;  // F x C
  std::vector<LayerParams> layers;
  EdgeParams edge;
  Eigen::MatrixXd fc;       // classes x C
  Eigen::VectorXd fc_bias;  // classes

  /// Calls fn(name, tensor) for each trainable tensor in a fixed order. The
  /// frozen Fourier matrix is not visited.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("input"), self.input);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& layer = self.layers[l];
      const std::string p = "layers[" + std::to_string(l) + "].";
      fn(p + "phi", layer.phi);
      fn(p + "omega", layer.omega);
      fn(p + "spatial", layer.spatial);
      for (std::size_t k = 0; k < layer.temporal.size(); ++k) {
        fn(p + "temporal[" + std::to_string(k) + "]", layer.temporal[k]);
      }
      fn(p + "spatial_scale", layer.spatial_scale);
      fn(p + "spatial_shift", layer.spatial_shift);
      fn(p + "temporal_scale", layer.temporal_scale);
      fn(p + "temporal_shift", layer.temporal_shift);
    }
    for (int m = 0; m < 2; ++m) {
      fn("edge.theta_w[" + std::to_string(m) + "]", self.edge.theta_w[m]);
      fn("edge.theta_b[" + std::to_string(m) + "]", self.edge.theta_b[m]);
    }
    fn(std::string("edge.w_p"), self.edge.w_p);
    fn(std::string("fc"), self.fc);
    fn(std::string("fc_bias"), self.fc_bias);
  }

  /// Same shapes, all zeros, no Fourier matrix.
  Weights zeros_like() const;
  Eigen::Index parameter_count() const;
  bool all_finite() const;
  Weights& operator+=(const Weights& other);
  Weights& operator*=(double s);
};

/// Normalization statistics per layer: running averages (eval mode) or the
/// statistics of one batch (train mode).
struct NormStats {
  std::vector<Eigen::VectorXd> spatial_mean, spatial_var;
  std::vector<Eigen::VectorXd> temporal_mean, temporal_var;
};

struct Model {
  ModelConfig config;
  Weights weights;
  NormStats running;
  std::uint64_t seed = 0;
};

/// Deterministic initialization: every weight matrix is uniform in
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)], normalization scales 1 and shifts 0,
/// running means 0 and variances 1, Fourier matrix from N(0, sigma^2).
Model init_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace riskgraph
