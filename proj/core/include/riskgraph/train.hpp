#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskgraph/model.hpp"
#include "riskgraph/optimizer.hpp"
#include "riskgraph/scenario.hpp"

namespace riskgraph {

struct TrainConfig {
  AdamConfig adam;
  int epochs = 100;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Stop once eval-mode accuracy on the training split reaches this value
  /// (checked after every epoch). 0 disables the check.
  double early_stop_accuracy = 0.0;

  void validate(const ModelConfig& model) const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // from the train-mode passes of the epoch
  std::optional<double> train_eval_accuracy;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

/// Class index of every scenario label; ConfigError for unknown labels.
std::vector<int> encode_labels(const std::vector<Scenario>& set, const ModelConfig& config);

/// Mini-batch cross-entropy training with Adam. Shuffling, initialization
/// and batching are seeded by config.seed; with threads = 1 the result is
/// bit-reproducible. Throws TrainingError on an empty split or a non-finite
/// loss.
TrainResult train(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                  const ModelConfig& model_config, const TrainConfig& config);

/// Eval-mode loss and accuracy on a labelled set.
struct SetMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<Eigen::VectorXd> probs;
};
SetMetrics evaluate_set(const std::vector<Scenario>& set, const Model& model, int threads = 1);

nlohmann::json history_to_json(const std::vector<EpochRecord>& history);

}  // namespace riskgraph
