#include "riskgraph/model_io.hpp"

#include "riskgraph/errors.hpp"
#include "riskgraph/random.hpp"
#include "riskgraph/scenario_io.hpp"

namespace riskgraph {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

const json& field(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(where + "." + key + ": missing field");
  return *it;
}

void read_matrix(const json& j, Eigen::MatrixXd& m, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != m.rows()) {
    throw ParseError(where + ": expected " + std::to_string(m.rows()) + " rows");
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw ParseError(where + "[" + std::to_string(r) + "]: expected " + std::to_string(m.cols()) + " columns");
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const json& x = row[static_cast<std::size_t>(c)];
      if (!x.is_number()) throw ParseError(where + ": non-numeric entry");
      m(r, c) = x.get<double>();
    }
  }
}

void read_vector(const json& j, Eigen::VectorXd& v, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != v.size()) {
    throw ParseError(where + ": expected " + std::to_string(v.size()) + " entries");
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const json& x = j[static_cast<std::size_t>(i)];
    if (!x.is_number()) throw ParseError(where + ": non-numeric entry");
    v[i] = x.get<double>();
  }
}

template <typename T>
void read_tensor(const json& j, T& t, const std::string& where) {
  if constexpr (T::ColsAtCompileTime == 1) {
    read_vector(j, t, where);
  } else {
    read_matrix(j, t, where);
  }
}

template <typename T>
json tensor_to_json(const T& t) {
  if constexpr (T::ColsAtCompileTime == 1) {
    return vector_to_json(t);
  } else {
    return matrix_to_json(t);
  }
}

json merge_known(const json& defaults, const json& j, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  json merged = defaults;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError(what + ": unknown key '" + it.key() + "'");
    merged[it.key()] = *it;
  }
  return merged;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"pos_embed", c.pos_embed},
          {"fourier_features", c.fourier_features},
          {"fourier_sigma", c.fourier_sigma},
          {"mu", c.mu},
          {"layers", c.layers},
          {"tau", c.tau},
          {"class_names", c.class_names},
          {"norm", c.norm == NormMode::Batch ? "batch" : "none"},
          {"norm_eps", c.norm_eps},
          {"norm_momentum", c.norm_momentum}};
}

ModelConfig model_config_from_json(const json& j) {
  const json m = merge_known(model_config_to_json(ModelConfig{}), j, "model config");
  ModelConfig c;
  try {
    c.feature_dim = m["feature_dim"].get<int>();
    c.hidden = m["hidden"].get<int>();
    c.embed = m["embed"].get<int>();
    c.pos_embed = m["pos_embed"].get<int>();
    c.fourier_features = m["fourier_features"].get<int>();
    c.fourier_sigma = m["fourier_sigma"].get<double>();
    c.mu = m["mu"].get<double>();
    c.layers = m["layers"].get<int>();
    c.tau = m["tau"].get<int>();
    c.class_names = m["class_names"].get<std::vector<std::string>>();
    const auto norm = m["norm"].get<std::string>();
    if (norm == "batch") {
      c.norm = NormMode::Batch;
    } else if (norm == "none") {
      c.norm = NormMode::None;
    } else {
      throw ConfigError("model config: norm must be 'batch' or 'none'");
    }
    c.norm_eps = m["norm_eps"].get<double>();
    c.norm_momentum = m["norm_momentum"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"threads", c.threads},
          {"early_stop_accuracy", c.early_stop_accuracy}};
}

TrainConfig train_config_from_json(const json& j) {
  const json m = merge_known(train_config_to_json(TrainConfig{}), j, "train config");
  TrainConfig c;
  try {
    c.adam.learning_rate = m["learning_rate"].get<double>();
    c.adam.beta1 = m["beta1"].get<double>();
    c.adam.beta2 = m["beta2"].get<double>();
    c.adam.epsilon = m["epsilon"].get<double>();
    c.epochs = m["epochs"].get<int>();
    c.batch_size = m["batch_size"].get<int>();
    c.seed = m["seed"].get<std::uint64_t>();
    c.threads = m["threads"].get<int>();
    c.early_stop_accuracy = m["early_stop_accuracy"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

json model_to_json(const Model& m) {
  json tensors = json::object();
  Weights::visit(m.weights, [&](const std::string& name, const auto& t) { tensors[name] = tensor_to_json(t); });
  json running = json::array();
  for (std::size_t l = 0; l < m.running.spatial_mean.size(); ++l) {
    running.push_back({{"spatial_mean", vector_to_json(m.running.spatial_mean[l])},
                       {"spatial_var", vector_to_json(m.running.spatial_var[l])},
                       {"temporal_mean", vector_to_json(m.running.temporal_mean[l])},
                       {"temporal_var", vector_to_json(m.running.temporal_var[l])}});
  }
  return {{"schema_version", kModelSchemaVersion},
          {"seed", m.seed},
          {"config", model_config_to_json(m.config)},
          {"num_classes", m.config.num_classes()},
          {"tensors", std::move(tensors)},
          {"fourier", matrix_to_json(m.weights.edge.fourier)},
          {"running_stats", std::move(running)}};
}

Model model_from_json(const json& j) {
  const int version = field(j, "schema_version", "model").get<int>();
  if (version != kModelSchemaVersion) {
    throw ParseError("model.schema_version: unsupported version " + std::to_string(version));
  }
  ModelConfig config;
  try {
    config = model_config_from_json(field(j, "config", "model"));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("model.config: ") + e.what());
  }
  if (j.contains("num_classes") && j["num_classes"] != config.num_classes()) {
    throw ParseError("model.num_classes: disagrees with class_names");
  }
  const auto seed = field(j, "seed", "model").get<std::uint64_t>();
  // Shapes come from a fresh initialization; every value is then overwritten.
  Model m = init_model(config, seed);
  const json& tensors = field(j, "tensors", "model");
  if (!tensors.is_object()) throw ParseError("model.tensors: expected an object");
  std::size_t seen = 0;
  Weights::visit(m.weights, [&](const std::string& name, auto& t) {
    read_tensor(field(tensors, name, "model.tensors"), t, "model.tensors." + name);
    ++seen;
  });
  if (seen != tensors.size()) throw ParseError("model.tensors: unexpected extra tensors");
  read_matrix(field(j, "fourier", "model"), m.weights.edge.fourier, "model.fourier");
  const json& running = field(j, "running_stats", "model");
  if (!running.is_array() || static_cast<int>(running.size()) != config.layers) {
    throw ParseError("model.running_stats: expected one entry per layer");
  }
  for (int l = 0; l < config.layers; ++l) {
    const json& r = running[static_cast<std::size_t>(l)];
    const std::string where = "model.running_stats[" + std::to_string(l) + "]";
    read_vector(field(r, "spatial_mean", where), m.running.spatial_mean[l], where + ".spatial_mean");
    read_vector(field(r, "spatial_var", where), m.running.spatial_var[l], where + ".spatial_var");
    read_vector(field(r, "temporal_mean", where), m.running.temporal_mean[l], where + ".temporal_mean");
    read_vector(field(r, "temporal_var", where), m.running.temporal_var[l], where + ".temporal_var");
  }
  return m;
}

void save_model(const Model& m, const std::filesystem::path& path) { write_json_file(model_to_json(m), path); }

Model load_model(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return model_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string model_digest(const Model& m) { return hex_digest(model_to_json(m).dump()); }

}  // namespace riskgraph
