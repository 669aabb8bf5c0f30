#pragma once

#include "riskgraph/model.hpp"

namespace riskgraph {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators mirroring the trainable tensors.
struct OptimizerState {
  Weights first_moment;
  Weights second_moment;
  long step = 0;

  static OptimizerState zeros_like(const Weights& w) { return {w.zeros_like(), w.zeros_like(), 0}; }
};

/// One bias-corrected Adam update of every trainable tensor. The frozen
/// Fourier matrix is untouched. Throws NumericError on non-finite gradients.
void adam_step(Weights& params, const Weights& grads, OptimizerState& state, const AdamConfig& config);

}  // namespace riskgraph
