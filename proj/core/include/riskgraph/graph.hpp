#pragma once

#include <map>
#include <vector>

#include <Eigen/Core>

#include "riskgraph/geometry.hpp"
#include "riskgraph/model.hpp"
#include "riskgraph/scenario.hpp"

namespace riskgraph {

/// Node slot reserved for the ego vehicle in every frame.
inline constexpr int kEgoIndex = 0;
/// Agent id reported for the ego node.
inline constexpr int kEgoId = -1;

/// Graph nodes of a scenario: the ego at slot 0 followed by the agents in
/// scenario order. The ego sits at the origin, is non-vulnerable and is
/// present in every frame.
struct NodeSet {
  int gamma = 0;
  std::vector<int> agent_ids;
  std::vector<bool> vulnerable;
  std::vector<std::vector<bool>> present;       // [t][node]
  std::vector<std::vector<Point3>> positions;  // [t][node]

  int nodes() const { return static_cast<int>(agent_ids.size()); }
};

NodeSet make_node_set(const Scenario& s);

/// gamma(v) = [cos(2 pi B v); sin(2 pi B v)]. Throws ShapeError if B has
/// the wrong column count.
Eigen::VectorXd fourier_map(const Eigen::VectorXd& v, const Eigen::MatrixXd& b);

/// theta_m(p) = p^T W_m + b_m.
Eigen::VectorXd embed_position(const Point3& p, bool vulnerable, const EdgeParams& edge);

/// f_p = ReLU(w_p . gamma(theta_{m_i}(p_i) + theta_{m_j}(p_j))).
double positional_relation(const Point3& p_i, bool m_i, const Point3& p_j, bool m_j,
                           const EdgeParams& edge);

/// f_a = (phi^T a_i) . (omega^T a_j) / sqrt(D), with phi and omega C x D.
double appearance_relation(const Eigen::VectorXd& a_i, const Eigen::VectorXd& a_j,
                           const Eigen::MatrixXd& phi, const Eigen::MatrixXd& omega);

/// Layer-independent edge terms of one frame.
struct PositionalEdges {
  Eigen::MatrixXd gate;      // 1 where both nodes present and within mu
  Eigen::MatrixXd relation;  // f_p on gated pairs, 0 elsewhere
  Eigen::MatrixXd preactivation;  // w_p . gamma(.) on gated pairs
};

PositionalEdges positional_edges(const NodeSet& nodes, int t, const EdgeParams& edge, double mu);

/// A row-normalized frame of interaction weights.
struct NormalizedRows {
  Eigen::MatrixXd adjacency;  // G_t
  Eigen::MatrixXd numerator;  // gate * f_p * exp(f_a - row max)
  Eigen::VectorXd row_sum;
  std::vector<bool> fallback;  // row had no positive numerator; self edge only
};

/// Normalizes gated interactions row by row: G(i,j) = gate f_p exp(f_a) /
/// sum_j(...). The row max of f_a over gated entries is subtracted inside
/// exp. Rows of absent nodes are zero; present rows with an all-zero
/// numerator fall back to a self connection.
NormalizedRows normalize_interactions(const Eigen::MatrixXd& gate, const Eigen::MatrixXd& f_p,
                                      const Eigen::MatrixXd& f_a, const std::vector<bool>& present);

/// All pairwise appearance relations of one frame: (X phi)(X omega)^T / sqrt(D).
Eigen::MatrixXd appearance_relations(const Eigen::MatrixXd& features, const Eigen::MatrixXd& phi,
                                     const Eigen::MatrixXd& omega);

/// One frame of the adjacency for node features X_t (rows = nodes).
NormalizedRows build_adjacency_frame(const std::vector<bool>& present, const Eigen::MatrixXd& features,
                                     const PositionalEdges& edges, const Eigen::MatrixXd& phi,
                                     const Eigen::MatrixXd& omega);

struct AdjacencyTensor {
  std::vector<Eigen::MatrixXd> frames;     // gamma x (K+1) x (K+1)
  std::vector<std::vector<bool>> valid;    // [t][node]
  std::vector<int> agent_ids;              // node slot -> agent id (ego = kEgoId)
};

/// Stacks build_adjacency_frame over all frames using per-frame features.
AdjacencyTensor build_adjacency(const NodeSet& nodes, const std::vector<Eigen::MatrixXd>& features,
                                const EdgeParams& edge, const Eigen::MatrixXd& phi,
                                const Eigen::MatrixXd& omega, double mu);

/// Mean over each agent's valid frames of G_t(ego, agent).
std::map<int, double> ego_interaction_profile(const AdjacencyTensor& g);

}  // namespace riskgraph
