#include "riskgraph/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <tuple>

#include "riskgraph/errors.hpp"

namespace riskgraph {

namespace {

constexpr std::array<std::pair<AgentClass, std::string_view>, 6> kClassNames{{
    {AgentClass::Person, "person"},
    {AgentClass::Bicycle, "bicycle"},
    {AgentClass::Car, "car"},
    {AgentClass::Motorcycle, "motorcycle"},
    {AgentClass::Bus, "bus"},
    {AgentClass::Truck, "truck"},
}};

bool finite(const Point3& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z);
}

std::string agent_field(std::size_t index, std::string_view field) {
  return "agents[" + std::to_string(index) + "]." + std::string(field);
}

}  // namespace

std::string_view to_string(AgentClass c) {
  for (const auto& [cls, name] : kClassNames) {
    if (cls == c) return name;
  }
  return "unknown";
}

std::optional<AgentClass> parse_agent_class(std::string_view name) {
  for (const auto& [cls, n] : kClassNames) {
    if (n == name) return cls;
  }
  return std::nullopt;
}

const AgentFrameState* Agent::state_at(int t) const {
  if (t < 0 || t >= static_cast<int>(presence.size()) || !presence[t]) return nullptr;
  auto it = std::lower_bound(states.begin(), states.end(), t,
                             [](const AgentFrameState& s, int frame) { return s.t < frame; });
  return (it != states.end() && it->t == t) ? &*it : nullptr;
}

const Agent* Scenario::find_agent(int agent_id) const {
  for (const auto& a : agents) {
    if (a.agent_id == agent_id) return &a;
  }
  return nullptr;
}

void Scenario::validate() const {
  if (gamma < 1) throw ParseError("gamma: must be >= 1, got " + std::to_string(gamma));
  if (!(fps > 0.0)) throw ParseError("fps: must be positive");
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) {
    throw ParseError("intrinsics: focal lengths must be positive");
  }
  const auto f = ego_feature.size();
  if (f < 1) throw ParseError("ego_feature: must be non-empty");
  if (!ego_feature.allFinite()) throw ParseError("ego_feature: non-finite value");
  if (static_cast<int>(context.size()) != gamma) {
    throw ParseError("context: expected " + std::to_string(gamma) + " frames, got " +
                     std::to_string(context.size()));
  }
  for (std::size_t t = 0; t < context.size(); ++t) {
    if (context[t].size() != f) {
      throw ParseError("context[" + std::to_string(t) + "]: expected width " + std::to_string(f) +
                       ", got " + std::to_string(context[t].size()));
    }
    if (!context[t].allFinite()) {
      throw ParseError("context[" + std::to_string(t) + "]: non-finite value");
    }
  }
  std::set<int> ids;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Agent& a = agents[i];
    if (!ids.insert(a.agent_id).second) {
      throw ParseError(agent_field(i, "agent_id") + ": duplicate id " + std::to_string(a.agent_id));
    }
    if (static_cast<int>(a.presence.size()) != gamma) {
      throw ParseError(agent_field(i, "presence") + ": length " + std::to_string(a.presence.size()) +
                       " does not match gamma " + std::to_string(gamma));
    }
    const auto present = std::count(a.presence.begin(), a.presence.end(), true);
    if (present == 0) throw ParseError(agent_field(i, "presence") + ": agent is never present");
    if (static_cast<std::size_t>(present) != a.states.size()) {
      throw ParseError(agent_field(i, "states") + ": expected " + std::to_string(present) +
                       " states (one per present frame), got " + std::to_string(a.states.size()));
    }
    std::size_t k = 0;
    for (int t = 0; t < gamma; ++t) {
      if (!a.presence[t]) continue;
      const AgentFrameState& st = a.states[k];
      const std::string where = agent_field(i, "states[" + std::to_string(k) + "]");
      if (st.t != t) {
        throw ParseError(where + ".t: expected frame " + std::to_string(t) + ", got " +
                         std::to_string(st.t));
      }
      if (!finite(st.position)) throw ParseError(where + ".position: non-finite value");
      if (st.appearance.size() != f) {
        throw ParseError(where + ".appearance: expected width " + std::to_string(f) + ", got " +
                         std::to_string(st.appearance.size()));
      }
      if (!st.appearance.allFinite()) throw ParseError(where + ".appearance: non-finite value");
      ++k;
    }
  }
  if (ground_truth_risk && !ids.contains(*ground_truth_risk)) {
    throw ParseError("ground_truth_risk: unknown agent id " + std::to_string(*ground_truth_risk));
  }
  if (ground_truth_group) {
    for (std::size_t i = 0; i < ground_truth_group->size(); ++i) {
      if (!ids.contains((*ground_truth_group)[i])) {
        throw ParseError("ground_truth_group[" + std::to_string(i) + "]: unknown agent id " +
                         std::to_string((*ground_truth_group)[i]));
      }
    }
  }
}

Eigen::VectorXd fuse_context(const Eigen::VectorXd& appearance, const Eigen::VectorXd& context) {
  if (appearance.size() != context.size()) {
    throw ShapeError("fuse_context: appearance width " + std::to_string(appearance.size()) +
                     " != context width " + std::to_string(context.size()));
  }
  return appearance + context;
}

Scenario mask_group(const Scenario& s, const std::set<int>& agent_ids) {
  for (int id : agent_ids) {
    if (s.find_agent(id) == nullptr) {
      throw NotFoundError("mask: unknown agent id " + std::to_string(id));
    }
  }
  Scenario out = s;
  std::erase_if(out.agents, [&](const Agent& a) { return agent_ids.contains(a.agent_id); });
  // Ground truth may not refer to agents that no longer exist.
  if (out.ground_truth_risk && agent_ids.contains(*out.ground_truth_risk)) {
    out.ground_truth_risk.reset();
  }
  if (out.ground_truth_group) {
    std::erase_if(*out.ground_truth_group, [&](int id) { return agent_ids.contains(id); });
  }
  return out;
}

Scenario mask_agent(const Scenario& s, int agent_id) { return mask_group(s, {agent_id}); }

RuleOutcome apply_stop_rule(const Scenario& s, double d_stop) {
  struct Approach {
    int frame;
    int agent_id;
  };
  std::vector<Approach> triggering;
  for (const Agent& a : s.agents) {
    double best = std::numeric_limits<double>::infinity();
    int best_t = -1;
    for (const AgentFrameState& st : a.states) {
      if (st.position.z <= 0.0) continue;
      const double dist = st.position.vec().norm();
      if (dist < best) {
        best = dist;
        best_t = st.t;
      }
    }
    if (best_t >= 0 && best < d_stop) triggering.push_back({best_t, a.agent_id});
  }
  RuleOutcome out;
  if (triggering.empty()) return out;
  out.stop = true;
  const auto risk = std::min_element(triggering.begin(), triggering.end(),
                                     [](const Approach& x, const Approach& y) {
                                       return std::tie(x.frame, x.agent_id) <
                                              std::tie(y.frame, y.agent_id);
                                     });
  out.risk_agent = risk->agent_id;
  for (const auto& a : triggering) out.triggering_agents.push_back(a.agent_id);
  std::sort(out.triggering_agents.begin(), out.triggering_agents.end());
  return out;
}

}  // namespace riskgraph
