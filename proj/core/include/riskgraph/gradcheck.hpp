#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskgraph/model.hpp"
#include "riskgraph/scenario.hpp"
#include "riskgraph/stgcn.hpp"

namespace riskgraph {

struct GradCheckOptions {
  double step = 1e-5;        // central-difference step h
  double tolerance = 1e-4;   // max relative error for PASS
  double floor = 1e-8;       // denominator floor of the relative error
  Mode mode = Mode::Train;
  int max_coords_per_tensor = 0;  // 0 checks every coordinate
  std::uint64_t sample_seed = 0;  // used when sampling coordinates
};

struct TensorCheck {
  std::string name;
  long checked = 0;
  long skipped = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  long checked = 0;
  long skipped_kink_coords = 0;
  std::vector<TensorCheck> tensors;
};

/// Compares `analytic` with central finite differences of the mean batch
/// loss. A coordinate is skipped as kink-adjacent when the +h or -h
/// evaluation switches any ReLU relative to the unperturbed pass.
GradCheckReport compare_gradients(const Model& model, std::span<const Scenario* const> batch,
                                  std::span<const int> labels, const Weights& analytic,
                                  const GradCheckOptions& options);

/// Analytic gradients from forward_backward, checked by compare_gradients.
GradCheckReport grad_check(const Model& model, std::span<const Scenario* const> batch,
                           std::span<const int> labels, const GradCheckOptions& options);

/// Small compact scenarios where every agent is within the distance gate for
/// part of the clip, so the edge parameters receive gradient.
std::vector<Scenario> reference_scenarios(int count, int gamma, int agents, int feature_dim,
                                          std::uint64_t seed);

/// The reference small model: C = width, F = width, D = width, L = 3, tau = 3.
ModelConfig reference_model_config(int width);

nlohmann::json gradcheck_report_to_json(const GradCheckReport& report);

}  // namespace riskgraph
