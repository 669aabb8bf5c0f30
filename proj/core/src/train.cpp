#include "riskgraph/train.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "parallel.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/random.hpp"
#include "riskgraph/stgcn.hpp"

namespace riskgraph {

namespace {

int argmax(const Eigen::VectorXd& p) {
  Eigen::Index idx = 0;
  p.maxCoeff(&idx);
  return static_cast<int>(idx);
}

void update_running(NormStats& running, const NormStats& batch, long count, double momentum) {
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::size_t l = 0; l < running.spatial_mean.size(); ++l) {
    running.spatial_mean[l] = (1.0 - momentum) * running.spatial_mean[l] + momentum * batch.spatial_mean[l];
    running.spatial_var[l] = (1.0 - momentum) * running.spatial_var[l] + momentum * unbias * batch.spatial_var[l];
    running.temporal_mean[l] = (1.0 - momentum) * running.temporal_mean[l] + momentum * batch.temporal_mean[l];
    running.temporal_var[l] =
        (1.0 - momentum) * running.temporal_var[l] + momentum * unbias * batch.temporal_var[l];
  }
}

// Splits a shuffled order into batches; a trailing batch of one is merged into
// its predecessor so batch statistics always see at least two clips.
std::vector<std::vector<int>> make_batches(const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("train config: Adam moment decays must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train config: epsilon must be positive");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (model.norm == NormMode::Batch && batch_size < 2) {
    throw ConfigError("train config: batch statistics need batch_size >= 2");
  }
  if (threads < 1) throw ConfigError("train config: threads must be >= 1");
  if (early_stop_accuracy < 0.0 || early_stop_accuracy > 1.0) {
    throw ConfigError("train config: early_stop_accuracy must be in [0, 1]");
  }
}

std::vector<int> encode_labels(const std::vector<Scenario>& set, const ModelConfig& config) {
  std::vector<int> labels;
  labels.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int idx = config.class_index(set[i].label);
    if (idx < 0) {
      throw ConfigError("scenario " + std::to_string(i) + ": label '" + set[i].label +
                        "' is not one of the model classes");
    }
    labels.push_back(idx);
  }
  return labels;
}

SetMetrics evaluate_set(const std::vector<Scenario>& set, const Model& model, int threads) {
  SetMetrics out;
  if (set.empty()) return out;
  const auto labels = encode_labels(set, model.config);
  out.probs.resize(set.size());
  detail::parallel_for(static_cast<int>(set.size()), threads,
                       [&](int i) { out.probs[i] = forward(set[i], model, Mode::Eval); });
  int correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    out.loss += cross_entropy(out.probs[i], labels[i]);
    correct += argmax(out.probs[i]) == labels[i] ? 1 : 0;
  }
  out.loss /= static_cast<double>(set.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return out;
}

TrainResult train(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                  const ModelConfig& model_config, const TrainConfig& config) {
  model_config.validate();
  config.validate(model_config);
  if (train_set.empty()) throw TrainingError("training split is empty");
  const auto labels = encode_labels(train_set, model_config);
  encode_labels(val_set, model_config);

  TrainResult result;
  result.model = init_model(model_config, config.seed);
  Model& model = result.model;
  OptimizerState state = OptimizerState::zeros_like(model.weights);
  Rng shuffler(config.seed ^ 0x5851f42d4c957f2dULL);

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  BatchOptions opts;
  opts.mode = Mode::Train;
  opts.threads = config.threads;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    for (const auto& idx : make_batches(order, config.batch_size)) {
      std::vector<const Scenario*> batch;
      std::vector<int> batch_labels;
      for (int i : idx) {
        batch.push_back(&train_set[i]);
        batch_labels.push_back(labels[i]);
      }
      BatchResult r;
      try {
        r = forward_backward(batch, batch_labels, model, opts);
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(r.loss)) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
      }
      loss_sum += r.loss * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) correct += argmax(r.probs[b]) == batch_labels[b] ? 1 : 0;
      adam_step(model.weights, r.gradients, state, config.adam);
      if (model_config.norm == NormMode::Batch) {
        update_running(model.running, r.batch_stats, r.valid_rows, model_config.norm_momentum);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!val_set.empty()) {
      const SetMetrics m = evaluate_set(val_set, model, config.threads);
      rec.val_loss = m.loss;
      rec.val_accuracy = m.accuracy;
    }
    bool stop = false;
    if (config.early_stop_accuracy > 0.0) {
      rec.train_eval_accuracy = evaluate_set(train_set, model, config.threads).accuracy;
      stop = *rec.train_eval_accuracy >= config.early_stop_accuracy;
    }
    result.history.push_back(rec);
    if (stop) break;
  }
  return result;
}

nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : history) {
    nlohmann::json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"train_accuracy", r.train_accuracy}};
    if (r.train_eval_accuracy) j["train_eval_accuracy"] = *r.train_eval_accuracy;
    if (r.val_loss) j["val_loss"] = *r.val_loss;
    if (r.val_accuracy) j["val_accuracy"] = *r.val_accuracy;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace riskgraph
