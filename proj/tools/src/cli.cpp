#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "riskgraph/errors.hpp"
#include "riskgraph/gradcheck.hpp"
#include "riskgraph/model_io.hpp"
#include "riskgraph/random.hpp"
#include "riskgraph/risk.hpp"
#include "riskgraph/scenario_io.hpp"
#include "riskgraph/stgcn.hpp"
#include "riskgraph/train.hpp"

namespace riskgraph::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct GenerateArgs {
  std::string config;
  std::string out;
  int n = 100;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

struct EvalArgs {
  std::string manifest;
  std::string model;
  std::string split = "test";
  std::string out = ".";
  double delta = kDefaultDelta;
  double eta = kDefaultEta;
  int threads = 1;
};

struct RiskArgs {
  std::string scenario;
  std::string model;
  std::string out = ".";
  std::string group;
  double delta = kDefaultDelta;
  double eta = kDefaultEta;
  bool dump_graph = false;
  int threads = 1;
};

struct GradCheckArgs {
  int width = 8;
  int gamma = 4;
  int agents = 2;
  int batch = 2;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  std::string out = ".";
};

json header(const std::string& command, std::uint64_t seed) {
  return {{"schema_version", kReportSchemaVersion}, {"command", command}, {"seed", seed}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::vector<Scenario> load_split(const DatasetManifest& m, const std::vector<std::string>& split) {
  std::vector<Scenario> out;
  for (const auto& path : m.resolve(split)) out.push_back(load_scenario(path));
  return out;
}

std::set<int> parse_group(const std::string& text) {
  std::set<int> ids;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      ids.insert(id);
    } catch (const std::logic_error&) {
      throw ConfigError("--group: '" + item + "' is not an agent id");
    }
  }
  if (ids.empty()) throw ConfigError("--group: no agent ids given");
  return ids;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  GeneratorConfig cfg;
  if (!a.config.empty()) cfg = generator_config_from_json(read_json_file(a.config));
  if (a.n < 1) throw ConfigError("--n must be >= 1, got " + std::to_string(a.n));
  const fs::path dir(a.out);
  const DatasetManifest m = generate_dataset(cfg, a.n, a.seed, dir);
  json run = header("generate", a.seed);
  run["n"] = a.n;
  run["config"] = generator_config_to_json(cfg);
  run["config_digest"] = m.config_digest;
  run["manifest"] = "manifest.json";
  write_json_file(run, dir / "run.json");
  out << (dir / "manifest.json").string() << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  json model_json = json::object();
  json train_json = json::object();
  if (!a.config.empty()) {
    const json cfg = read_json_file(a.config);
    if (!cfg.is_object()) throw ConfigError(a.config + ": expected a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
      if (it.key() == "model") {
        model_json = *it;
      } else if (it.key() == "train") {
        train_json = *it;
      } else {
        throw ConfigError(a.config + ": unknown key '" + it.key() + "'");
      }
    }
  }
  const DatasetManifest manifest = load_manifest(a.manifest);
  if (manifest.train.empty()) throw ConfigError(a.manifest + ": training split is empty");
  const auto train_set = load_split(manifest, manifest.train);
  const auto val_set = load_split(manifest, manifest.val);

  // The appearance width defaults to that of the data.
  if (model_json.is_object() && !model_json.contains("feature_dim")) {
    model_json["feature_dim"] = train_set.front().feature_dim();
  }
  const ModelConfig mc = model_config_from_json(model_json);
  TrainConfig tc = train_config_from_json(train_json);
  if (a.seed) tc.seed = *a.seed;
  if (a.threads) tc.threads = *a.threads;
  tc.validate(mc);

  const TrainResult result = train(train_set, val_set, mc, tc);
  const fs::path dir(a.out);
  ensure_dir(dir);
  save_model(result.model, dir / "model.json");
  json history = header("train", tc.seed);
  history["epochs"] = history_to_json(result.history);
  write_json_file(history, dir / "history.json");

  json run = header("train", tc.seed);
  run["manifest"] = a.manifest;
  run["threads"] = tc.threads;
  run["model_config"] = model_config_to_json(mc);
  run["train_config"] = train_config_to_json(tc);
  run["epochs_run"] = result.history.size();
  run["model_digest"] = model_digest(result.model);
  run["history_digest"] = hex_digest(history.dump());
  write_json_file(run, dir / "run.json");

  const EpochRecord& last = result.history.back();
  out << "epochs " << last.epoch << " train_loss " << last.train_loss << " train_accuracy " << last.train_accuracy
      << "\n"
      << (dir / "model.json").string() << "\n";
  return kOk;
}

json classification_metrics(const std::vector<Scenario>& set, const Model& model, int threads) {
  const SetMetrics m = evaluate_set(set, model, threads);
  const auto labels = encode_labels(set, model.config);
  const int k = model.config.num_classes();
  std::vector<int> tp(k, 0), predicted(k, 0), support(k, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    Eigen::Index guess = 0;
    m.probs[i].maxCoeff(&guess);
    ++predicted[guess];
    ++support[labels[i]];
    if (guess == labels[i]) ++tp[guess];
  }
  json per_class = json::object();
  for (int c = 0; c < k; ++c) {
    per_class[model.config.class_names[c]] = {
        {"precision", predicted[c] > 0 ? static_cast<double>(tp[c]) / predicted[c] : 0.0},
        {"recall", support[c] > 0 ? static_cast<double>(tp[c]) / support[c] : 0.0},
        {"support", support[c]}};
  }
  return {{"count", set.size()}, {"loss", m.loss}, {"accuracy", m.accuracy}, {"per_class", std::move(per_class)}};
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(a.manifest);
  const std::vector<std::string>* split = nullptr;
  if (a.split == "train") split = &manifest.train;
  if (a.split == "val") split = &manifest.val;
  if (a.split == "test") split = &manifest.test;
  if (split == nullptr) throw ConfigError("--split must be train, val or test");
  if (split->empty()) throw ConfigError(a.manifest + ": the " + a.split + " split is empty");
  if (!(a.delta > 0.0 && a.delta < 1.0)) throw ConfigError("--delta must be in (0, 1)");
  if (!(a.eta >= 0.0 && a.eta <= 1.0)) throw ConfigError("--eta must be in [0, 1]");

  const Model model = load_model(a.model);
  const auto set = load_split(manifest, *split);
  json report = header("eval", model.seed);
  report["split"] = a.split;
  report["model_digest"] = model_digest(model);
  report["classification"] = classification_metrics(set, model, a.threads);

  std::vector<Scenario> annotated;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].ground_truth_risk || set[i].ground_truth_group) {
      annotated.push_back(set[i]);
      names.push_back((*split)[i]);
    }
  }
  if (!annotated.empty()) {
    json recall = recall_to_json(evaluate_recall(annotated, names, model, a.delta, a.eta, a.threads));
    recall["delta"] = a.delta;
    recall["eta"] = a.eta;
    report["risk_recall"] = std::move(recall);
  }

  const fs::path dir(a.out);
  ensure_dir(dir);
  write_json_file(report, dir / "metrics.json");
  json run = header("eval", model.seed);
  run["manifest"] = a.manifest;
  run["model"] = a.model;
  run["split"] = a.split;
  run["delta"] = a.delta;
  run["eta"] = a.eta;
  run["threads"] = a.threads;
  write_json_file(run, dir / "run.json");
  out << report.dump(2) << "\n";
  return kOk;
}

json adjacency_to_json(const AdjacencyTensor& g) {
  json frames = json::array();
  for (const auto& f : g.frames) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < f.cols(); ++j) row.push_back(f(i, j));
      rows.push_back(std::move(row));
    }
    frames.push_back(std::move(rows));
  }
  return {{"layer", 1}, {"node_ids", g.agent_ids}, {"frames", std::move(frames)}};
}

int cmd_risk(const RiskArgs& a, std::ostream& out) {
  std::optional<std::set<int>> group;
  if (!a.group.empty()) group = parse_group(a.group);
  if (!(a.eta >= 0.0 && a.eta <= 1.0)) throw ConfigError("--eta must be in [0, 1]");
  const Model model = load_model(a.model);
  const Scenario s = load_scenario(a.scenario);

  RiskReport r = risk_scores(s, model, a.delta, a.threads);
  if (group) {
    GroupResult g;
    g.members.assign(group->begin(), group->end());
    g.score = group_risk_score(s, model, *group);
    g.explicit_group = true;
    r.group = g;
  } else if (r.gated_in && !r.empty_intervention) {
    const std::set<int> found = identify_risk_group(s, model, a.eta);
    if (!found.empty()) {
      GroupResult g;
      g.members.assign(found.begin(), found.end());
      g.score = group_risk_score(s, model, found);
      g.eta = a.eta;
      r.group = g;
    }
  }

  json report = header("risk", model.seed);
  report.update(risk_report_to_json(r));
  report["model_digest"] = model_digest(model);
  report["scenario_path"] = a.scenario;
  if (a.dump_graph) report["graph"] = adjacency_to_json(forward_trace(s, model).adjacency.front());

  const fs::path dir(a.out);
  ensure_dir(dir);
  write_json_file(report, dir / "risk_report.json");
  json run = header("risk", model.seed);
  run["scenario"] = a.scenario;
  run["model"] = a.model;
  run["delta"] = a.delta;
  run["eta"] = a.eta;
  run["group"] = group ? json(std::vector<int>(group->begin(), group->end())) : json(nullptr);
  run["dump_graph"] = a.dump_graph;
  run["threads"] = a.threads;
  write_json_file(run, dir / "run.json");
  out << report.dump(2) << "\n";
  return kOk;
}

int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out) {
  if (a.width < 1 || a.agents < 0 || a.batch < 1) throw ConfigError("gradcheck: sizes must be positive");
  if (!(a.tol > 0.0)) throw ConfigError("--tol must be positive");
  const Model model = init_model(reference_model_config(a.width), a.seed);
  const auto scenarios = reference_scenarios(a.batch, a.gamma, a.agents, a.width, a.seed);
  std::vector<const Scenario*> batch;
  std::vector<int> labels;
  for (const auto& s : scenarios) {
    batch.push_back(&s);
    labels.push_back(model.config.class_index(s.label));
  }
  GradCheckOptions opts;
  opts.tolerance = a.tol;
  const GradCheckReport r = grad_check(model, batch, labels, opts);

  json report = header("gradcheck", a.seed);
  report.update(gradcheck_report_to_json(r));
  report["tolerance"] = a.tol;
  report["step"] = opts.step;
  const fs::path dir(a.out);
  ensure_dir(dir);
  write_json_file(report, dir / "gradcheck.json");
  json run = header("gradcheck", a.seed);
  run["width"] = a.width;
  run["gamma"] = a.gamma;
  run["agents"] = a.agents;
  run["batch"] = a.batch;
  run["tol"] = a.tol;
  write_json_file(run, dir / "run.json");
  out << (r.pass ? "PASS" : "FAIL") << " max_rel_error " << r.max_rel_error << " worst " << r.worst_tensor
      << " checked " << r.checked << " skipped_kink_coords " << r.skipped_kink_coords << "\n";
  return r.pass ? kOk : kGradCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interaction-graph driving behavior prediction and risk object identification"};
  app.name("riskgraph");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a labelled synthetic dataset");
  g->add_option("--config", gen.config, "Generator config JSON");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n", gen.n, "Number of scenarios")->capture_default_str();
  g->add_option("--seed", gen.seed, "Base seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a behavior model");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  t->add_option("--config", tr.config, "JSON with optional 'model' and 'train' sections");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed, "Training seed (overrides the config)");
  t->add_option("--threads", tr.threads, "Worker threads");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset split");
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  e->add_option("--model", ev.model, "Model file")->required();
  e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  e->add_option("--delta", ev.delta, "Stop-confidence gate")->capture_default_str();
  e->add_option("--eta", ev.eta, "Risk-group threshold")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->capture_default_str();
  e->add_option("--threads", ev.threads, "Worker threads")->capture_default_str();

  RiskArgs rk;
  auto* r = app.add_subcommand("risk", "Rank the agents of one scenario by causal risk");
  r->add_option("--scenario", rk.scenario, "Scenario file")->required();
  r->add_option("--model", rk.model, "Model file")->required();
  r->add_option("--delta", rk.delta, "Stop-confidence gate")->capture_default_str();
  r->add_option("--eta", rk.eta, "Risk-group threshold")->capture_default_str();
  r->add_option("--group", rk.group, "Comma-separated agent ids removed together");
  r->add_flag("--dump-graph", rk.dump_graph, "Include the layer-1 adjacency");
  r->add_option("--out", rk.out, "Output directory")->capture_default_str();
  r->add_option("--threads", rk.threads, "Worker threads")->capture_default_str();

  GradCheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  c->add_option("--width", gc.width, "Channel width C = F = D")->capture_default_str();
  c->add_option("--gamma", gc.gamma, "Frames per clip")->capture_default_str();
  c->add_option("--agents", gc.agents, "Agents per clip")->capture_default_str();
  c->add_option("--batch", gc.batch, "Clips per batch")->capture_default_str();
  c->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  c->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  c->add_option("--out", gc.out, "Output directory")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*r) return cmd_risk(rk, out);
    return cmd_gradcheck(gc, out);
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const TrainingError& ex) {
    err << "error: " << ex.what() << "\n";
    return kDivergence;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kDivergence;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return kConfig;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kConfig;
  }
}

}  // namespace riskgraph::cli
