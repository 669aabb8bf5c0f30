#include "riskgraph/graph.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "riskgraph/errors.hpp"

namespace riskgraph {

NodeSet make_node_set(const Scenario& s) {
  NodeSet ns;
  ns.gamma = s.gamma;
  const int n = s.agent_count() + 1;
  ns.agent_ids.reserve(n);
  ns.agent_ids.push_back(kEgoId);
  ns.vulnerable.push_back(false);
  for (const Agent& a : s.agents) {
    ns.agent_ids.push_back(a.agent_id);
    ns.vulnerable.push_back(a.vulnerable());
  }
  ns.present.assign(s.gamma, std::vector<bool>(n, false));
  ns.positions.assign(s.gamma, std::vector<Point3>(n));
  for (int t = 0; t < s.gamma; ++t) {
    ns.present[t][kEgoIndex] = true;
    for (int i = 0; i < s.agent_count(); ++i) {
      if (const AgentFrameState* st = s.agents[i].state_at(t)) {
        ns.present[t][i + 1] = true;
        ns.positions[t][i + 1] = st->position;
      }
    }
  }
  return ns;
}

Eigen::VectorXd fourier_map(const Eigen::VectorXd& v, const Eigen::MatrixXd& b) {
  if (b.cols() != v.size()) {
    throw ShapeError("fourier_map: B has " + std::to_string(b.cols()) + " columns but v has " +
                     std::to_string(v.size()) + " entries");
  }
  const Eigen::Index k = b.rows();
  const Eigen::VectorXd s = (2.0 * std::numbers::pi) * (b * v);
  Eigen::VectorXd out(2 * k);
  out.head(k) = s.unaryExpr([](double x) { return std::cos(x); });
  out.tail(k) = s.unaryExpr([](double x) { return std::sin(x); });
  return out;
}

Eigen::VectorXd embed_position(const Point3& p, bool vulnerable, const EdgeParams& edge) {
  const int m = vulnerable ? 1 : 0;
  return edge.theta_w[m].transpose() * p.vec() + edge.theta_b[m];
}

double positional_relation(const Point3& p_i, bool m_i, const Point3& p_j, bool m_j,
                           const EdgeParams& edge) {
  const Eigen::VectorXd e = embed_position(p_i, m_i, edge) + embed_position(p_j, m_j, edge);
  const Eigen::VectorXd g = fourier_map(e, edge.fourier);
  if (g.size() != edge.w_p.size()) throw ShapeError("positional_relation: w_p width mismatch");
  return std::max(0.0, edge.w_p.dot(g));
}

double appearance_relation(const Eigen::VectorXd& a_i, const Eigen::VectorXd& a_j,
                           const Eigen::MatrixXd& phi, const Eigen::MatrixXd& omega) {
  if (phi.rows() != a_i.size() || omega.rows() != a_j.size() || phi.cols() != omega.cols()) {
    throw ShapeError("appearance_relation: projection shapes do not match the features");
  }
  const double scale = std::sqrt(static_cast<double>(phi.cols()));
  return (phi.transpose() * a_i).dot(omega.transpose() * a_j) / scale;
}

PositionalEdges positional_edges(const NodeSet& nodes, int t, const EdgeParams& edge, double mu) {
  const int n = nodes.nodes();
  const auto& present = nodes.present[t];
  const auto& pos = nodes.positions[t];
  PositionalEdges out{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
                      Eigen::MatrixXd::Zero(n, n)};
  std::vector<Eigen::VectorXd> embedded(n);
  for (int i = 0; i < n; ++i) {
    if (present[i]) embedded[i] = embed_position(pos[i], nodes.vulnerable[i], edge);
  }
  for (int i = 0; i < n; ++i) {
    if (!present[i]) continue;
    for (int j = 0; j < n; ++j) {
      if (!present[j] || !within_range(pos[i], pos[j], mu)) continue;
      out.gate(i, j) = 1.0;
      const double u = edge.w_p.dot(fourier_map(embedded[i] + embedded[j], edge.fourier));
      out.preactivation(i, j) = u;
      out.relation(i, j) = std::max(0.0, u);
    }
  }
  return out;
}

NormalizedRows normalize_interactions(const Eigen::MatrixXd& gate, const Eigen::MatrixXd& f_p,
                                      const Eigen::MatrixXd& f_a, const std::vector<bool>& present) {
  const Eigen::Index n = gate.rows();
  if (gate.cols() != n || f_p.rows() != n || f_p.cols() != n || f_a.rows() != n || f_a.cols() != n ||
      static_cast<Eigen::Index>(present.size()) != n) {
    throw ShapeError("normalize_interactions: relation matrices must all be square and agree");
  }
  NormalizedRows out{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n),
                     Eigen::VectorXd::Zero(n), std::vector<bool>(n, false)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!present[i]) continue;
    double row_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (gate(i, j) != 0.0 && present[j]) row_max = std::max(row_max, f_a(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (gate(i, j) == 0.0 || !present[j]) continue;
      const double w = f_p(i, j) * std::exp(f_a(i, j) - row_max);
      out.numerator(i, j) = w;
      sum += w;
    }
    out.row_sum[i] = sum;
    if (sum > 0.0) {
      out.adjacency.row(i) = out.numerator.row(i) / sum;
    } else {
      out.fallback[i] = true;
      out.adjacency(i, i) = 1.0;
    }
  }
  return out;
}

Eigen::MatrixXd appearance_relations(const Eigen::MatrixXd& features, const Eigen::MatrixXd& phi,
                                     const Eigen::MatrixXd& omega) {
  if (features.cols() != phi.rows() || features.cols() != omega.rows() || phi.cols() != omega.cols()) {
    throw ShapeError("appearance_relations: projection shapes do not match the features");
  }
  const double scale = std::sqrt(static_cast<double>(phi.cols()));
  return (features * phi) * (features * omega).transpose() / scale;
}

NormalizedRows build_adjacency_frame(const std::vector<bool>& present, const Eigen::MatrixXd& features,
                                     const PositionalEdges& edges, const Eigen::MatrixXd& phi,
                                     const Eigen::MatrixXd& omega) {
  bool any = false;
  for (bool p : present) any = any || p;
  if (!any) throw ShapeError("build_adjacency_frame: frame has no present nodes");
  return normalize_interactions(edges.gate, edges.relation, appearance_relations(features, phi, omega),
                                present);
}

AdjacencyTensor build_adjacency(const NodeSet& nodes, const std::vector<Eigen::MatrixXd>& features,
                                const EdgeParams& edge, const Eigen::MatrixXd& phi,
                                const Eigen::MatrixXd& omega, double mu) {
  if (static_cast<int>(features.size()) != nodes.gamma) {
    throw ShapeError("build_adjacency: expected one feature matrix per frame");
  }
  AdjacencyTensor g;
  g.valid = nodes.present;
  g.agent_ids = nodes.agent_ids;
  for (int t = 0; t < nodes.gamma; ++t) {
    const PositionalEdges pe = positional_edges(nodes, t, edge, mu);
    g.frames.push_back(build_adjacency_frame(nodes.present[t], features[t], pe, phi, omega).adjacency);
  }
  return g;
}

std::map<int, double> ego_interaction_profile(const AdjacencyTensor& g) {
  std::map<int, double> profile;
  for (std::size_t i = 0; i < g.agent_ids.size(); ++i) {
    if (static_cast<int>(i) == kEgoIndex) continue;
    double sum = 0.0;
    int frames = 0;
    for (std::size_t t = 0; t < g.frames.size(); ++t) {
      if (!g.valid[t][i]) continue;
      sum += g.frames[t](kEgoIndex, static_cast<Eigen::Index>(i));
      ++frames;
    }
    profile[g.agent_ids[i]] = frames > 0 ? sum / frames : 0.0;
  }
  return profile;
}

}  // namespace riskgraph
