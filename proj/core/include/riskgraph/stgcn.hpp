#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "riskgraph/graph.hpp"
#include "riskgraph/model.hpp"
#include "riskgraph/scenario.hpp"

namespace riskgraph {

enum class Mode { Train, Eval };

/// ReLU(G X W). Throws ShapeError on mismatched shapes.
Eigen::MatrixXd spatial_conv(const Eigen::MatrixXd& g, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w);

/// Offset-indexed temporal convolution with a residual inside the ReLU:
///   out_t = ReLU(sum_o spatial_{t+o-tau/2} K[o][m(node)] + residual_t)
/// with zero padding outside the clip. Node-frames that are absent are zero
/// in the result. `kernels` holds tau * 2 matrices laid out as in
/// LayerParams::temporal.
std::vector<Eigen::MatrixXd> temporal_conv(const std::vector<Eigen::MatrixXd>& spatial,
                                           const std::vector<Eigen::MatrixXd>& kernels,
                                           const std::vector<bool>& vulnerable,
                                           const std::vector<Eigen::MatrixXd>& residual,
                                           const std::vector<std::vector<bool>>& present);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Probability floor used by cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

/// -log(max(p[label], 1e-12)). Throws ConfigError for an out-of-range label.
double cross_entropy(const Eigen::VectorXd& probs, int label);

struct BatchOptions {
  Mode mode = Mode::Train;
  bool compute_gradients = true;
  int threads = 1;
  /// Record the on/off pattern of every ReLU (used to detect kinks).
  bool record_activation_pattern = false;
};

struct BatchResult {
  double loss = 0.0;  // mean cross-entropy over the batch (0 without labels)
  std::vector<Eigen::VectorXd> probs;
  Weights gradients;       // gradient of `loss`; empty unless requested
  NormStats batch_stats;   // statistics used in train mode
  long valid_rows = 0;     // node-frames the statistics were computed over
  std::vector<std::uint8_t> activation_pattern;
  /// Smallest |pre-activation| over all ReLUs of valid entries.
  double min_abs_preactivation = 0.0;
};

/// Batched forward pass and, optionally, the exact reverse-mode gradient of
/// the mean cross-entropy with respect to every trainable tensor. In train
/// mode normalization uses statistics over the valid node-frames of the
/// whole batch; in eval mode it uses the running statistics. `labels` may be
/// empty when gradients are not requested. The model is not modified.
BatchResult forward_backward(std::span<const Scenario* const> batch, std::span<const int> labels,
                             const Model& model, const BatchOptions& options);

/// Class probabilities for a single scenario.
Eigen::VectorXd forward(const Scenario& s, const Model& model, Mode mode = Mode::Eval);

/// Class probabilities plus the adjacency tensor each layer used.
struct ForwardTrace {
  Eigen::VectorXd probs;
  std::vector<AdjacencyTensor> adjacency;  // one per layer
};

ForwardTrace forward_trace(const Scenario& s, const Model& model, Mode mode = Mode::Eval);

}  // namespace riskgraph
