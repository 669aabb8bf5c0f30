#include "riskgraph/scenario_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "riskgraph/errors.hpp"
#include "riskgraph/random.hpp"

namespace riskgraph {

using nlohmann::json;

std::string hex_digest(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

namespace {

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError((where.empty() ? std::string() : where + ".") + key + ": missing field");
  }
  return *it;
}

std::string join(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + ": expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
  return v.get<int>();
}

Eigen::VectorXd as_vector(const json& v, const std::string& where) {
  if (!v.is_array()) throw ParseError(where + ": expected an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = as_double(v[i], where + "[" + std::to_string(i) + "]");
  }
  return out;
}

json to_array(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json agent_to_json(const Agent& a) {
  json presence = json::array();
  for (bool p : a.presence) presence.push_back(p ? 1 : 0);
  json states = json::array();
  for (const auto& st : a.states) {
    json js{{"t", st.t},
            {"position", {st.position.x, st.position.y, st.position.z}},
            {"appearance", to_array(st.appearance)}};
    if (st.observation) {
      js["observation"] = {{"u", st.observation->u},
                           {"v", st.observation->v},
                           {"depth", st.observation->depth}};
    }
    states.push_back(std::move(js));
  }
  return {{"agent_id", a.agent_id},
          {"class", std::string(to_string(a.cls))},
          {"presence", std::move(presence)},
          {"states", std::move(states)}};
}

Agent agent_from_json(const json& j, const std::string& where, const CameraIntrinsics& k) {
  Agent a;
  a.agent_id = as_int(require(j, "agent_id", where), join(where, "agent_id"));
  const json& cls = require(j, "class", where);
  if (!cls.is_string()) throw ParseError(join(where, "class") + ": expected a string");
  const auto parsed = parse_agent_class(cls.get<std::string>());
  if (!parsed) throw ParseError(join(where, "class") + ": unknown class '" + cls.get<std::string>() + "'");
  a.cls = *parsed;

  const json& presence = require(j, "presence", where);
  if (!presence.is_array()) throw ParseError(join(where, "presence") + ": expected an array");
  for (std::size_t t = 0; t < presence.size(); ++t) {
    const int bit = as_int(presence[t], join(where, "presence") + "[" + std::to_string(t) + "]");
    if (bit != 0 && bit != 1) {
      throw ParseError(join(where, "presence") + "[" + std::to_string(t) + "]: expected 0 or 1");
    }
    a.presence.push_back(bit == 1);
  }

  const json& states = require(j, "states", where);
  if (!states.is_array()) throw ParseError(join(where, "states") + ": expected an array");
  for (std::size_t i = 0; i < states.size(); ++i) {
    const std::string sw = join(where, "states") + "[" + std::to_string(i) + "]";
    const json& js = states[i];
    AgentFrameState st;
    st.t = as_int(require(js, "t", sw), join(sw, "t"));
    if (auto obs = js.find("observation"); obs != js.end() && !obs->is_null()) {
      const std::string ow = join(sw, "observation");
      st.observation = PixelObservation{as_double(require(*obs, "u", ow), join(ow, "u")),
                                        as_double(require(*obs, "v", ow), join(ow, "v")),
                                        as_double(require(*obs, "depth", ow), join(ow, "depth"))};
    }
    if (js.contains("position") || !st.observation) {
      const Eigen::VectorXd p = as_vector(require(js, "position", sw), join(sw, "position"));
      if (p.size() != 3) throw ParseError(join(sw, "position") + ": expected 3 components");
      st.position = {p[0], p[1], p[2]};
    } else {
      try {
        st.position = inverse_project(*st.observation, k);
      } catch (const Error& e) {
        throw ParseError(join(sw, "observation") + ": " + e.what());
      }
    }
    st.appearance = as_vector(require(js, "appearance", sw), join(sw, "appearance"));
    a.states.push_back(std::move(st));
  }
  return a;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

json scenario_to_json(const Scenario& s) {
  json context = json::array();
  for (const auto& c : s.context) context.push_back(to_array(c));
  json agents = json::array();
  for (const auto& a : s.agents) agents.push_back(agent_to_json(a));
  json j{{"schema_version", kScenarioSchemaVersion},
         {"gamma", s.gamma},
         {"fps", s.fps},
         {"intrinsics",
          {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy}, {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy}}},
         {"ego_feature", to_array(s.ego_feature)},
         {"context", std::move(context)},
         {"agents", std::move(agents)},
         {"label", s.label},
         {"ground_truth_risk", nullptr},
         {"ground_truth_group", nullptr}};
  if (s.ground_truth_risk) j["ground_truth_risk"] = *s.ground_truth_risk;
  if (s.ground_truth_group) j["ground_truth_group"] = *s.ground_truth_group;
  return j;
}

Scenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("scenario: expected a JSON object");
  const int version = as_int(require(j, "schema_version", ""), "schema_version");
  if (version != kScenarioSchemaVersion) {
    throw ParseError("schema_version: unsupported version " + std::to_string(version) + " (expected " +
                     std::to_string(kScenarioSchemaVersion) + ")");
  }
  Scenario s;
  s.gamma = as_int(require(j, "gamma", ""), "gamma");
  s.fps = as_double(require(j, "fps", ""), "fps");
  const json& k = require(j, "intrinsics", "");
  s.intrinsics = {as_double(require(k, "fx", "intrinsics"), "intrinsics.fx"),
                  as_double(require(k, "fy", "intrinsics"), "intrinsics.fy"),
                  as_double(require(k, "cx", "intrinsics"), "intrinsics.cx"),
                  as_double(require(k, "cy", "intrinsics"), "intrinsics.cy")};
  s.ego_feature = as_vector(require(j, "ego_feature", ""), "ego_feature");
  const json& context = require(j, "context", "");
  if (!context.is_array()) throw ParseError("context: expected an array");
  for (std::size_t t = 0; t < context.size(); ++t) {
    s.context.push_back(as_vector(context[t], "context[" + std::to_string(t) + "]"));
  }
  const json& agents = require(j, "agents", "");
  if (!agents.is_array()) throw ParseError("agents: expected an array");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    s.agents.push_back(agent_from_json(agents[i], "agents[" + std::to_string(i) + "]", s.intrinsics));
  }
  const json& label = require(j, "label", "");
  if (!label.is_string()) throw ParseError("label: expected a string");
  s.label = label.get<std::string>();
  if (auto it = j.find("ground_truth_risk"); it != j.end() && !it->is_null()) {
    s.ground_truth_risk = as_int(*it, "ground_truth_risk");
  }
  if (auto it = j.find("ground_truth_group"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError("ground_truth_group: expected an array or null");
    std::vector<int> group;
    for (std::size_t i = 0; i < it->size(); ++i) {
      group.push_back(as_int((*it)[i], "ground_truth_group[" + std::to_string(i) + "]"));
    }
    s.ground_truth_group = std::move(group);
  }
  s.validate();
  return s;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  write_text(j.dump(2) + "\n", path);
}

void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  write_json_file(scenario_to_json(s), path);
}

Scenario load_scenario(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return scenario_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

json generator_config_to_json(const GeneratorConfig& c) {
  return {{"gamma", c.gamma},
          {"fps", c.fps},
          {"feature_dim", c.feature_dim},
          {"intrinsics", {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy}, {"cx", c.intrinsics.cx}, {"cy", c.intrinsics.cy}}},
          {"min_agents", c.min_agents},
          {"max_agents", c.max_agents},
          {"stop_fraction", c.stop_fraction},
          {"group_fraction", c.group_fraction},
          {"group_min_size", c.group_min_size},
          {"group_max_size", c.group_max_size},
          {"d_stop", c.d_stop},
          {"clearance", c.clearance},
          {"noise", c.noise},
          {"context_scale", c.context_scale},
          {"context_jitter", c.context_jitter},
          {"prototype_seed", c.prototype_seed},
          {"pedestrian_speed_min", c.pedestrian_speed_min},
          {"pedestrian_speed_max", c.pedestrian_speed_max},
          {"vehicle_speed_min", c.vehicle_speed_min},
          {"vehicle_speed_max", c.vehicle_speed_max},
          {"view_depth_min", c.view_depth_min},
          {"train_fraction", c.train_fraction},
          {"val_fraction", c.val_fraction}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generator config: expected a JSON object");
  const json defaults = generator_config_to_json(GeneratorConfig{});
  json merged = defaults;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("generator config: unknown key '" + it.key() + "'");
    if (it.key() == "intrinsics") {
      for (auto kt = it->begin(); kt != it->end(); ++kt) {
        if (!defaults["intrinsics"].contains(kt.key())) {
          throw ConfigError("generator config: unknown key 'intrinsics." + kt.key() + "'");
        }
        merged["intrinsics"][kt.key()] = *kt;
      }
    } else {
      merged[it.key()] = *it;
    }
  }
  GeneratorConfig c;
  try {
    c.gamma = merged["gamma"].get<int>();
    c.fps = merged["fps"].get<double>();
    c.feature_dim = merged["feature_dim"].get<int>();
    const auto& k = merged["intrinsics"];
    c.intrinsics = {k["fx"].get<double>(), k["fy"].get<double>(), k["cx"].get<double>(), k["cy"].get<double>()};
    c.min_agents = merged["min_agents"].get<int>();
    c.max_agents = merged["max_agents"].get<int>();
    c.stop_fraction = merged["stop_fraction"].get<double>();
    c.group_fraction = merged["group_fraction"].get<double>();
    c.group_min_size = merged["group_min_size"].get<int>();
    c.group_max_size = merged["group_max_size"].get<int>();
    c.d_stop = merged["d_stop"].get<double>();
    c.clearance = merged["clearance"].get<double>();
    c.noise = merged["noise"].get<double>();
    c.context_scale = merged["context_scale"].get<double>();
    c.context_jitter = merged["context_jitter"].get<double>();
    c.prototype_seed = merged["prototype_seed"].get<std::uint64_t>();
    c.pedestrian_speed_min = merged["pedestrian_speed_min"].get<double>();
    c.pedestrian_speed_max = merged["pedestrian_speed_max"].get<double>();
    c.vehicle_speed_min = merged["vehicle_speed_min"].get<double>();
    c.vehicle_speed_max = merged["vehicle_speed_max"].get<double>();
    c.view_depth_min = merged["view_depth_min"].get<double>();
    c.train_fraction = merged["train_fraction"].get<double>();
    c.val_fraction = merged["val_fraction"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_digest(const GeneratorConfig& cfg) {
  return hex_digest(generator_config_to_json(cfg).dump());
}

json manifest_to_json(const DatasetManifest& m) {
  return {{"schema_version", kScenarioSchemaVersion},
          {"seed", m.seed},
          {"config_digest", m.config_digest},
          {"splits", {{"train", m.train}, {"val", m.val}, {"test", m.test}}}};
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_json_file(manifest_to_json(m), path);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  const std::string where = path.string();
  DatasetManifest m;
  try {
    m.seed = require(j, "seed", where).get<std::uint64_t>();
    m.config_digest = require(j, "config_digest", where).get<std::string>();
    const json& splits = require(j, "splits", where);
    std::set<std::string> seen;
    auto read_split = [&](const char* name, std::vector<std::string>& dst) {
      auto it = splits.find(name);
      if (it == splits.end()) return;
      for (const auto& p : *it) {
        const auto s = p.get<std::string>();
        if (!seen.insert(s).second) {
          throw ParseError(where + ": splits." + name + ": path '" + s + "' listed more than once");
        }
        dst.push_back(s);
      }
    };
    read_split("train", m.train);
    read_split("val", m.val);
    read_split("test", m.test);
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  return m;
}

}  // namespace riskgraph
