#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "riskgraph/errors.hpp"
#include "riskgraph/random.hpp"
#include "riskgraph/scenario.hpp"
#include "riskgraph/scenario_io.hpp"

namespace riskgraph {

namespace {

constexpr int kMaxAttempts = 200;

// Constant-velocity motion in the ground plane of the camera frame (y = 0).
struct Trajectory {
  double x0, z0;  // position at frame t_ref
  double vx, vz;  // meters per frame
  double t_ref;

  Point3 at(int t) const {
    const double dt = t - t_ref;
    return {x0 + vx * dt, 0.0, z0 + vz * dt};
  }
};

struct PlannedAgent {
  AgentClass cls;
  Trajectory traj;
  int first = 0, last = 0;  // frame window, inclusive
};

AgentClass draw_class(Rng& rng, bool vulnerable_only) {
  // person, bicycle, car, motorcycle, bus, truck
  static constexpr std::array<double, 6> kWeights{0.35, 0.15, 0.3, 0.1, 0.05, 0.05};
  static constexpr std::array<AgentClass, 6> kClasses{AgentClass::Person, AgentClass::Bicycle,
                                                      AgentClass::Car,    AgentClass::Motorcycle,
                                                      AgentClass::Bus,    AgentClass::Truck};
  const std::size_t n = vulnerable_only ? 2 : kClasses.size();
  const double total = std::accumulate(kWeights.begin(), kWeights.begin() + n, 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    if (u < kWeights[i]) return kClasses[i];
    u -= kWeights[i];
  }
  return kClasses[n - 1];
}

double draw_speed(Rng& rng, AgentClass cls, const GeneratorConfig& cfg) {
  if (cls == AgentClass::Person) return rng.uniform(cfg.pedestrian_speed_min, cfg.pedestrian_speed_max);
  if (cls == AgentClass::Bicycle) {
    return rng.uniform(cfg.pedestrian_speed_max, 2.0 * cfg.pedestrian_speed_max);
  }
  return rng.uniform(cfg.vehicle_speed_min, cfg.vehicle_speed_max);
}

double sign(Rng& rng) { return rng.bernoulli(0.5) ? 1.0 : -1.0; }

std::vector<Eigen::VectorXd> class_prototypes(const GeneratorConfig& cfg) {
  Rng rng(cfg.prototype_seed);
  std::vector<Eigen::VectorXd> protos(7, Eigen::VectorXd(cfg.feature_dim));  // 6 classes + ego
  for (auto& p : protos) {
    for (int k = 0; k < cfg.feature_dim; ++k) p[k] = rng.normal();
  }
  return protos;
}

// An agent that crosses the ego path at depth z_cross, passing x = 0 exactly
// at integer frame t_cross.
Trajectory crossing(Rng& rng, AgentClass cls, const GeneratorConfig& cfg, double z_cross,
                    int t_cross) {
  const double speed = draw_speed(rng, cls, cfg) / cfg.fps;
  return {0.0, z_cross, sign(rng) * speed, 0.0, static_cast<double>(t_cross)};
}

// Background traffic that never comes near the ego.
Trajectory distractor(Rng& rng, AgentClass cls, const GeneratorConfig& cfg) {
  const double speed = draw_speed(rng, cls, cfg) / cfg.fps;
  const double far = cfg.clearance + 0.5;
  switch (rng.uniform_int(0, 2)) {
    case 0:  // parallel lane traffic
      return {sign(rng) * rng.uniform(far, far + 8.0), rng.uniform(4.0, 30.0), 0.0,
              sign(rng) * speed, 0.0};
    case 1:  // crossing well ahead
      return {0.0, rng.uniform(far, far + 15.0), sign(rng) * speed, 0.0,
              static_cast<double>(rng.uniform_int(0, cfg.gamma - 1))};
    default:  // parked
      return {sign(rng) * rng.uniform(far, far + 5.0), rng.uniform(4.0, 25.0), 0.0, 0.0, 0.0};
  }
}

double closest_in_view(const Trajectory& tr, int first, int last, const GeneratorConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  for (int t = first; t <= last; ++t) {
    const Point3 p = tr.at(t);
    if (p.z >= cfg.view_depth_min) best = std::min(best, p.vec().norm());
  }
  return best;
}

bool any_in_view(const Trajectory& tr, int first, int last, const GeneratorConfig& cfg) {
  for (int t = first; t <= last; ++t) {
    if (tr.at(t).z >= cfg.view_depth_min) return true;
  }
  return false;
}

PlannedAgent plan_distractor(Rng& rng, const GeneratorConfig& cfg) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    PlannedAgent a{draw_class(rng, false), {}, 0, cfg.gamma - 1};
    a.traj = distractor(rng, a.cls, cfg);
    if (cfg.gamma >= 4 && rng.bernoulli(0.3)) {
      const int len = rng.uniform_int(3, cfg.gamma);
      a.first = rng.uniform_int(0, cfg.gamma - len);
      a.last = a.first + len - 1;
    }
    if (any_in_view(a.traj, a.first, a.last, cfg) &&
        closest_in_view(a.traj, a.first, a.last, cfg) >= cfg.clearance) {
      return a;
    }
  }
  throw GenerationError("could not place a background agent outside the clearance radius");
}

Agent realize(const PlannedAgent& plan, int agent_id, const GeneratorConfig& cfg,
              const std::vector<Eigen::VectorXd>& protos, Rng& rng) {
  Agent a;
  a.agent_id = agent_id;
  a.cls = plan.cls;
  a.presence.assign(cfg.gamma, false);
  const auto& proto = protos[static_cast<std::size_t>(plan.cls)];
  for (int t = plan.first; t <= plan.last; ++t) {
    const Point3 p = plan.traj.at(t);
    if (p.z < cfg.view_depth_min) continue;
    a.presence[t] = true;
    AgentFrameState st;
    st.t = t;
    st.position = p;
    st.appearance = proto;
    for (int k = 0; k < cfg.feature_dim; ++k) st.appearance[k] += rng.normal(0.0, cfg.noise);
    a.states.push_back(std::move(st));
  }
  return a;
}

}  // namespace

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("generator config: " + what); };
  if (gamma < 1) fail("gamma must be >= 1");
  if (!(fps > 0.0)) fail("fps must be positive");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) fail("intrinsics focal lengths must be positive");
  if (min_agents < 0 || max_agents < min_agents || max_agents > 99) {
    fail("agent count range is invalid (0 <= min_agents <= max_agents <= 99)");
  }
  if (stop_fraction < 0.0 || stop_fraction > 1.0) fail("stop_fraction must be in [0, 1]");
  if (group_fraction < 0.0 || group_fraction > 1.0) fail("group_fraction must be in [0, 1]");
  if (group_min_size < 2 || group_max_size < group_min_size) fail("group size range is invalid");
  if (!(d_stop > 0.0)) fail("d_stop must be positive");
  if (!(clearance >= d_stop)) fail("clearance must be >= d_stop");
  if (noise < 0.0 || context_scale < 0.0 || context_jitter < 0.0) fail("noise scales must be >= 0");
  if (!(pedestrian_speed_min > 0.0) || pedestrian_speed_max < pedestrian_speed_min) {
    fail("pedestrian speed range is invalid");
  }
  if (!(vehicle_speed_min > 0.0) || vehicle_speed_max < vehicle_speed_min) {
    fail("vehicle speed range is invalid");
  }
  if (!(view_depth_min > 0.0) || view_depth_min >= 0.5 * d_stop) {
    fail("view_depth_min must be in (0, 0.5 * d_stop)");
  }
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    fail("split fractions must be non-negative and sum to at most 1");
  }
}

Scenario generate_scenario(const GeneratorConfig& cfg, std::uint64_t seed,
                           std::optional<ScenarioKind> kind) {
  cfg.validate();
  Rng rng(seed);
  if (!kind) {
    const bool stop = rng.bernoulli(cfg.stop_fraction);
    const bool group = stop && rng.bernoulli(cfg.group_fraction);
    kind = group ? ScenarioKind::GroupStop : (stop ? ScenarioKind::Stop : ScenarioKind::Go);
  }

  int causal = 0;
  if (*kind == ScenarioKind::Stop) causal = 1;
  if (*kind == ScenarioKind::GroupStop) {
    if (cfg.max_agents < cfg.group_min_size) {
      throw GenerationError("group scenario requested but max_agents < group_min_size");
    }
    causal = rng.uniform_int(cfg.group_min_size, std::min(cfg.group_max_size, cfg.max_agents));
  }
  if (causal > 0 && cfg.max_agents == 0) {
    throw GenerationError("Stop scenario requested with zero agents");
  }
  const int n_agents = std::max(causal, rng.uniform_int(cfg.min_agents, cfg.max_agents));

  std::vector<PlannedAgent> plans;
  if (causal > 0) {
    // The crossing happens away from the clip edges so it is observed.
    const int margin = cfg.gamma / 4;
    const int t_cross = rng.uniform_int(margin, std::max(margin, cfg.gamma - 1 - margin - (causal - 1)));
    const double dir = sign(rng);
    for (int g = 0; g < causal; ++g) {
      PlannedAgent a{draw_class(rng, *kind == ScenarioKind::GroupStop), {}, 0, cfg.gamma - 1};
      const double z_cross = rng.uniform(0.5 * cfg.d_stop, 0.8 * cfg.d_stop);
      a.traj = crossing(rng, a.cls, cfg, z_cross, std::min(t_cross + g, cfg.gamma - 1));
      if (*kind == ScenarioKind::GroupStop) a.traj.vx = dir * std::abs(a.traj.vx);
      plans.push_back(a);
    }
  }
  while (static_cast<int>(plans.size()) < n_agents) plans.push_back(plan_distractor(rng, cfg));

  const auto protos = class_prototypes(cfg);
  Scenario s;
  s.gamma = cfg.gamma;
  s.fps = cfg.fps;
  s.intrinsics = cfg.intrinsics;

  // Distinct ids, stored in random order so the file order carries no signal.
  std::vector<int> ids(99);
  std::iota(ids.begin(), ids.end(), 1);
  rng.shuffle(ids);
  std::vector<std::size_t> order(plans.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<int> causal_ids;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t p = order[k];
    s.agents.push_back(realize(plans[p], ids[p], cfg, protos, rng));
    if (static_cast<int>(p) < causal) causal_ids.push_back(ids[p]);
  }
  std::sort(causal_ids.begin(), causal_ids.end());

  Eigen::VectorXd base(cfg.feature_dim);
  for (int k = 0; k < cfg.feature_dim; ++k) base[k] = rng.normal(0.0, cfg.context_scale);
  for (int t = 0; t < cfg.gamma; ++t) {
    Eigen::VectorXd c = base;
    for (int k = 0; k < cfg.feature_dim; ++k) c[k] += rng.normal(0.0, cfg.context_jitter);
    s.context.push_back(std::move(c));
  }
  s.ego_feature = protos.back();
  for (int k = 0; k < cfg.feature_dim; ++k) s.ego_feature[k] += rng.normal(0.0, cfg.noise);

  const RuleOutcome rule = apply_stop_rule(s, cfg.d_stop);
  if (rule.stop != (causal > 0) || rule.triggering_agents != causal_ids) {
    throw GenerationError("generated trajectories disagree with the stop rule (seed " +
                          std::to_string(seed) + ")");
  }
  s.label = rule.stop ? "Stop" : "Go";
  s.ground_truth_risk = rule.risk_agent;
  if (*kind == ScenarioKind::GroupStop) s.ground_truth_group = causal_ids;
  return s;
}

std::vector<std::filesystem::path> DatasetManifest::resolve(
    const std::vector<std::string>& split) const {
  std::vector<std::filesystem::path> out;
  out.reserve(split.size());
  for (const auto& p : split) out.push_back(base_dir / p);
  return out;
}

DatasetManifest generate_dataset(const GeneratorConfig& cfg, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  cfg.validate();
  if (n < 1) throw ConfigError("dataset size must be >= 1, got " + std::to_string(n));

  const int n_stop = static_cast<int>(std::lround(n * cfg.stop_fraction));
  const int n_group = static_cast<int>(std::lround(n_stop * cfg.group_fraction));
  std::vector<ScenarioKind> kinds(n, ScenarioKind::Go);
  for (int i = 0; i < n_stop; ++i) kinds[i] = i < n_group ? ScenarioKind::GroupStop : ScenarioKind::Stop;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  rng.shuffle(kinds);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  m.config_digest = config_digest(cfg);
  m.base_dir = out_dir;
  const int n_train = static_cast<int>(std::lround(n * cfg.train_fraction));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(n * cfg.val_fraction)));
  for (int i = 0; i < n; ++i) {
    const Scenario s = generate_scenario(cfg, seed + static_cast<std::uint64_t>(i), kinds[i]);
    char name[32];
    std::snprintf(name, sizeof(name), "scenario_%05d.json", i);
    save_scenario(s, out_dir / name);
    auto& split = i < n_train ? m.train : (i < n_train + n_val ? m.val : m.test);
    split.emplace_back(name);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace riskgraph
