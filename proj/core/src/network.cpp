#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "parallel.hpp"
#include "riskgraph/errors.hpp"
#include "riskgraph/stgcn.hpp"

namespace riskgraph {

Eigen::MatrixXd spatial_conv(const Eigen::MatrixXd& g, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  if (g.rows() != g.cols() || g.cols() != x.rows() || x.cols() != w.rows()) {
    throw ShapeError("spatial_conv: incompatible shapes");
  }
  return (g * x * w).cwiseMax(0.0);
}

namespace {

// sum_o X'_{t+o-tau/2} K[o][m(node)] with zero padding.
std::vector<Eigen::MatrixXd> temporal_sum(const std::vector<Eigen::MatrixXd>& spatial,
                                          const std::vector<Eigen::MatrixXd>& kernels,
                                          const std::vector<bool>& vulnerable) {
  const int gamma = static_cast<int>(spatial.size());
  const int tau = static_cast<int>(kernels.size() / 2);
  const int half = tau / 2;
  std::vector<Eigen::MatrixXd> out;
  out.reserve(gamma);
  for (int t = 0; t < gamma; ++t) {
    const Eigen::Index n = spatial[t].rows();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, kernels[0].cols());
    for (int o = 0; o < tau; ++o) {
      const int src = t + o - half;
      if (src < 0 || src >= gamma) continue;
      for (Eigen::Index i = 0; i < n; ++i) {
        sum.row(i).noalias() += spatial[src].row(i) * kernels[o * 2 + (vulnerable[i] ? 1 : 0)];
      }
    }
    out.push_back(std::move(sum));
  }
  return out;
}

void zero_absent_rows(Eigen::MatrixXd& m, const std::vector<bool>& present) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (!present[i]) m.row(i).setZero();
  }
}

}  // namespace

std::vector<Eigen::MatrixXd> temporal_conv(const std::vector<Eigen::MatrixXd>& spatial,
                                           const std::vector<Eigen::MatrixXd>& kernels,
                                           const std::vector<bool>& vulnerable,
                                           const std::vector<Eigen::MatrixXd>& residual,
                                           const std::vector<std::vector<bool>>& present) {
  if (spatial.empty()) throw ShapeError("temporal_conv: clip must have at least one frame");
  if (kernels.empty() || kernels.size() % 2 != 0 || (kernels.size() / 2) % 2 == 0) {
    throw ShapeError("temporal_conv: expected tau * 2 kernels with odd tau");
  }
  if (residual.size() != spatial.size() || present.size() != spatial.size()) {
    throw ShapeError("temporal_conv: residual and presence must cover every frame");
  }
  for (std::size_t t = 0; t < spatial.size(); ++t) {
    if (spatial[t].rows() != static_cast<Eigen::Index>(vulnerable.size()) ||
        residual[t].rows() != spatial[t].rows() || residual[t].cols() != kernels[0].cols() ||
        spatial[t].cols() != kernels[0].rows()) {
      throw ShapeError("temporal_conv: frame " + std::to_string(t) + " has incompatible shape");
    }
  }
  auto out = temporal_sum(spatial, kernels, vulnerable);
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = (out[t] + residual[t]).cwiseMax(0.0);
    zero_absent_rows(out[t], present[t]);
  }
  return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double top = logits.maxCoeff();
  const Eigen::VectorXd e = logits.unaryExpr([top](double x) { return std::exp(x - top); });
  return e / e.sum();
}

double cross_entropy(const Eigen::VectorXd& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw ConfigError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[label], kProbabilityFloor));
}

namespace {

struct FrameCache {
  NormalizedRows adj;
  Eigen::MatrixXd relations;  // f_a
  Eigen::MatrixXd p, q;       // X phi, X omega
  Eigen::MatrixXd gx;         // G X
  Eigen::MatrixXd z;          // G X W, before normalization
  Eigen::MatrixXd z_hat;      // standardized z
  Eigen::MatrixXd z_out;      // normalized z (pre-ReLU)
  Eigen::MatrixXd xs;         // spatial output X'
  Eigen::MatrixXd tsum;       // temporal sum, before normalization
  Eigen::MatrixXd t_hat;
  Eigen::MatrixXd y;          // normalized temporal sum + residual (pre-ReLU)
};

struct ScenarioCache {
  NodeSet nodes;
  std::vector<PositionalEdges> positional;
  std::vector<Eigen::MatrixXd> fused;               // per frame, n x F
  std::vector<std::vector<Eigen::MatrixXd>> x;      // [layer][t], layer 0 = input projection
  std::vector<std::vector<FrameCache>> frames;      // [layer][t]
  int valid_count = 0;
  Eigen::VectorXd pooled, logits, probs;
};

struct NormApplied {
  Eigen::VectorXd mean, var, inv_std;
};

// Per-channel sum over valid rows of a set of frames.
struct MomentSums {
  Eigen::VectorXd sum;
  long count = 0;
};

MomentSums moments(const std::vector<Eigen::MatrixXd>& frames, const NodeSet& nodes, int channels) {
  MomentSums m{Eigen::VectorXd::Zero(channels), 0};
  for (int t = 0; t < nodes.gamma; ++t) {
    for (int i = 0; i < nodes.nodes(); ++i) {
      if (!nodes.present[t][i]) continue;
      m.sum += frames[t].row(i).transpose();
      ++m.count;
    }
  }
  return m;
}

void check_finite(const Eigen::MatrixXd& m, const char* what, int layer) {
  if (!m.allFinite()) {
    const std::string where = layer < 0 ? "input stage" : "layer " + std::to_string(layer + 1);
    throw NumericError(std::string("non-finite ") + what + " in " + where);
  }
}

class Engine {
 public:
  Engine(std::span<const Scenario* const> batch, const Model& model, const BatchOptions& options)
      : batch_(batch), model_(model), w_(model.weights), cfg_(model.config), options_(options),
        caches_(batch.size()) {}

  BatchResult run(std::span<const int> labels);
  std::vector<ScenarioCache>& caches() { return caches_; }

 private:
  int size() const { return static_cast<int>(batch_.size()); }
  bool normalized() const { return cfg_.norm == NormMode::Batch; }

  void prepare(int b);
  void spatial_linear(int b, int l);
  void spatial_activate(int b, int l, const NormApplied& norm);
  void temporal_activate(int b, int l, const NormApplied& norm);
  void classify(int b);

  NormApplied statistics(int l, bool spatial, NormStats& batch_stats);

  // Backward.
  void backward_head(int b, double scale, int label, Weights& g, std::vector<Eigen::MatrixXd>& dx);
  void backward_temporal(int b, int l, const NormApplied& norm, std::vector<Eigen::MatrixXd>& dx,
                         std::vector<Eigen::MatrixXd>& dy_out, Weights& g);
  void backward_spatial(int b, int l, const NormApplied& tnorm, const NormApplied& snorm,
                        const Eigen::VectorXd& t_sum_dy, const Eigen::VectorXd& t_sum_dy_xhat,
                        std::vector<Eigen::MatrixXd>& dy, std::vector<Eigen::MatrixXd>& dxs_out,
                        std::vector<Eigen::MatrixXd>& dx, Weights& g);
  void backward_edges(int b, int l, const NormApplied& snorm, const Eigen::VectorXd& s_sum_dy,
                      const Eigen::VectorXd& s_sum_dy_xhat, std::vector<Eigen::MatrixXd>& dz_out,
                      std::vector<Eigen::MatrixXd>& dx, std::vector<Eigen::MatrixXd>& dfp, Weights& g);
  void backward_input(int b, const std::vector<Eigen::MatrixXd>& dx, const std::vector<Eigen::MatrixXd>& dfp,
                      Weights& g);

  std::span<const Scenario* const> batch_;
  const Model& model_;
  const Weights& w_;
  const ModelConfig& cfg_;
  BatchOptions options_;
  std::vector<ScenarioCache> caches_;
  std::vector<NormApplied> spatial_norm_, temporal_norm_;
};

void Engine::prepare(int b) {
  const Scenario& s = *batch_[b];
  if (s.feature_dim() != cfg_.feature_dim) {
    throw ShapeError("scenario feature width " + std::to_string(s.feature_dim()) +
                     " does not match model feature_dim " + std::to_string(cfg_.feature_dim));
  }
  if (s.gamma < cfg_.tau) {
    throw ShapeError("scenario has " + std::to_string(s.gamma) + " frames, fewer than tau = " +
                     std::to_string(cfg_.tau));
  }
  ScenarioCache& c = caches_[b];
  c.nodes = make_node_set(s);
  const int n = c.nodes.nodes();
  c.x.assign(cfg_.layers + 1, {});
  c.frames.assign(cfg_.layers, std::vector<FrameCache>(s.gamma));
  c.valid_count = 0;
  for (int t = 0; t < s.gamma; ++t) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, cfg_.feature_dim);
    a.row(kEgoIndex) = fuse_context(s.ego_feature, s.context[t]).transpose();
    for (int i = 0; i < s.agent_count(); ++i) {
      if (const AgentFrameState* st = s.agents[i].state_at(t)) {
        a.row(i + 1) = fuse_context(st->appearance, s.context[t]).transpose();
      }
    }
    for (int i = 0; i < n; ++i) c.valid_count += c.nodes.present[t][i] ? 1 : 0;
    c.x[0].push_back(a * w_.input);
    c.fused.push_back(std::move(a));
    c.positional.push_back(positional_edges(c.nodes, t, w_.edge, cfg_.mu));
    check_finite(c.positional.back().relation, "positional relation", -1);
  }
}

void Engine::spatial_linear(int b, int l) {
  ScenarioCache& c = caches_[b];
  const LayerParams& lp = w_.layers[l];
  const double scale = std::sqrt(static_cast<double>(cfg_.embed));
  for (int t = 0; t < c.nodes.gamma; ++t) {
    FrameCache& f = c.frames[l][t];
    const Eigen::MatrixXd& x = c.x[l][t];
    f.p = x * lp.phi;
    f.q = x * lp.omega;
    f.relations = f.p * f.q.transpose() / scale;
    check_finite(f.relations, "appearance relation", l);
    f.adj = normalize_interactions(c.positional[t].gate, c.positional[t].relation, f.relations,
                                   c.nodes.present[t]);
    f.gx = f.adj.adjacency * x;
    f.z = f.gx * lp.spatial;
    check_finite(f.z, "spatial activation", l);
  }
}

NormApplied Engine::statistics(int l, bool spatial, NormStats& batch_stats) {
  const int ch = cfg_.hidden;
  NormApplied out;
  if (!normalized()) return out;
  if (options_.mode == Mode::Eval) {
    out.mean = spatial ? model_.running.spatial_mean[l] : model_.running.temporal_mean[l];
    out.var = spatial ? model_.running.spatial_var[l] : model_.running.temporal_var[l];
  } else {
    // Two-pass moments over every valid node-frame of the batch, summed in
    // batch order.
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(ch);
    long count = 0;
    auto frames_of = [&](int b) {
      std::vector<Eigen::MatrixXd> fr;
      for (auto& f : caches_[b].frames[l]) fr.push_back(spatial ? f.z : f.tsum);
      return fr;
    };
    std::vector<std::vector<Eigen::MatrixXd>> all(size());
    for (int b = 0; b < size(); ++b) {
      all[b] = frames_of(b);
      const MomentSums m = moments(all[b], caches_[b].nodes, ch);
      sum += m.sum;
      count += m.count;
    }
    out.mean = sum / static_cast<double>(count);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(ch);
    for (int b = 0; b < size(); ++b) {
      const NodeSet& nodes = caches_[b].nodes;
      for (int t = 0; t < nodes.gamma; ++t) {
        for (int i = 0; i < nodes.nodes(); ++i) {
          if (!nodes.present[t][i]) continue;
          sq += (all[b][t].row(i).transpose() - out.mean).array().square().matrix();
        }
      }
    }
    out.var = sq / static_cast<double>(count);
    auto& means = spatial ? batch_stats.spatial_mean : batch_stats.temporal_mean;
    auto& vars = spatial ? batch_stats.spatial_var : batch_stats.temporal_var;
    means[l] = out.mean;
    vars[l] = out.var;
  }
  out.inv_std = (out.var.array() + cfg_.norm_eps).rsqrt();
  return out;
}

void Engine::spatial_activate(int b, int l, const NormApplied& norm) {
  ScenarioCache& c = caches_[b];
  const LayerParams& lp = w_.layers[l];
  std::vector<Eigen::MatrixXd> xs;
  for (int t = 0; t < c.nodes.gamma; ++t) {
    FrameCache& f = c.frames[l][t];
    if (normalized()) {
      f.z_hat = ((f.z.rowwise() - norm.mean.transpose()).array().rowwise() * norm.inv_std.transpose().array())
                    .matrix();
      f.z_out = ((f.z_hat.array().rowwise() * lp.spatial_scale.transpose().array()).rowwise() +
                 lp.spatial_shift.transpose().array())
                    .matrix();
    } else {
      f.z_out = f.z;
    }
    zero_absent_rows(f.z_out, c.nodes.present[t]);
    f.xs = f.z_out.cwiseMax(0.0);
    xs.push_back(f.xs);
  }
  const auto sums = temporal_sum(xs, lp.temporal, c.nodes.vulnerable);
  for (int t = 0; t < c.nodes.gamma; ++t) {
    c.frames[l][t].tsum = sums[t];
    check_finite(sums[t], "temporal activation", l);
  }
}

void Engine::temporal_activate(int b, int l, const NormApplied& norm) {
  ScenarioCache& c = caches_[b];
  const LayerParams& lp = w_.layers[l];
  for (int t = 0; t < c.nodes.gamma; ++t) {
    FrameCache& f = c.frames[l][t];
    Eigen::MatrixXd normed;
    if (normalized()) {
      f.t_hat = ((f.tsum.rowwise() - norm.mean.transpose()).array().rowwise() *
                 norm.inv_std.transpose().array())
                    .matrix();
      normed = ((f.t_hat.array().rowwise() * lp.temporal_scale.transpose().array()).rowwise() +
                lp.temporal_shift.transpose().array())
                   .matrix();
    } else {
      normed = f.tsum;
    }
    f.y = normed + c.x[l][t];
    zero_absent_rows(f.y, c.nodes.present[t]);
    c.x[l + 1].push_back(f.y.cwiseMax(0.0));
  }
}

void Engine::classify(int b) {
  ScenarioCache& c = caches_[b];
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(cfg_.hidden);
  for (int t = 0; t < c.nodes.gamma; ++t) {
    for (int i = 0; i < c.nodes.nodes(); ++i) {
      if (c.nodes.present[t][i]) pooled += c.x[cfg_.layers][t].row(i).transpose();
    }
  }
  c.pooled = pooled / static_cast<double>(c.valid_count);
  c.logits = w_.fc * c.pooled + w_.fc_bias;
  c.probs = softmax(c.logits);
  if (!c.probs.allFinite()) throw NumericError("non-finite class probabilities");
}

// --- Backward ---------------------------------------------------------------

void Engine::backward_head(int b, double scale, int label, Weights& g, std::vector<Eigen::MatrixXd>& dx) {
  ScenarioCache& c = caches_[b];
  Eigen::VectorXd dlogits = c.probs;
  if (c.probs[label] < kProbabilityFloor) {
    dlogits.setZero();  // clamped: the loss is locally constant
  } else {
    dlogits[label] -= 1.0;
    dlogits *= scale;
  }
  g.fc.noalias() += dlogits * c.pooled.transpose();
  g.fc_bias += dlogits;
  const Eigen::RowVectorXd dpool = (w_.fc.transpose() * dlogits).transpose() / c.valid_count;
  dx.assign(c.nodes.gamma, Eigen::MatrixXd::Zero(c.nodes.nodes(), cfg_.hidden));
  for (int t = 0; t < c.nodes.gamma; ++t) {
    for (int i = 0; i < c.nodes.nodes(); ++i) {
      if (c.nodes.present[t][i]) dx[t].row(i) = dpool;
    }
  }
}

// Normalization backward for one frame given dL/d(normalized output):
// returns dL/d(input) on valid rows.
Eigen::MatrixXd norm_backward(const Eigen::MatrixXd& dout, const Eigen::MatrixXd& x_hat,
                              const Eigen::VectorXd& scale, const NormApplied& norm, Mode mode,
                              const Eigen::VectorXd& sum_dxhat, const Eigen::VectorXd& sum_dxhat_xhat,
                              long count) {
  const Eigen::MatrixXd dxhat = (dout.array().rowwise() * scale.transpose().array()).matrix();
  if (mode == Mode::Eval) {
    return (dxhat.array().rowwise() * norm.inv_std.transpose().array()).matrix();
  }
  const double inv_n = 1.0 / static_cast<double>(count);
  Eigen::MatrixXd dx = dxhat;
  dx.rowwise() -= (sum_dxhat * inv_n).transpose();
  dx -= (x_hat.array().rowwise() * (sum_dxhat_xhat * inv_n).transpose().array()).matrix();
  return (dx.array().rowwise() * norm.inv_std.transpose().array()).matrix();
}

BatchResult Engine::run(std::span<const int> labels) {
  const int batch = size();
  const int threads = options_.threads;
  const bool train = options_.mode == Mode::Train;
  BatchResult result;
  if (normalized() && train) {
    result.batch_stats.spatial_mean.resize(cfg_.layers);
    result.batch_stats.spatial_var.resize(cfg_.layers);
    result.batch_stats.temporal_mean.resize(cfg_.layers);
    result.batch_stats.temporal_var.resize(cfg_.layers);
  }

  detail::parallel_for(batch, threads, [&](int b) { prepare(b); });
  spatial_norm_.resize(cfg_.layers);
  temporal_norm_.resize(cfg_.layers);
  for (int l = 0; l < cfg_.layers; ++l) {
    detail::parallel_for(batch, threads, [&](int b) { spatial_linear(b, l); });
    spatial_norm_[l] = statistics(l, true, result.batch_stats);
    detail::parallel_for(batch, threads, [&](int b) { spatial_activate(b, l, spatial_norm_[l]); });
    temporal_norm_[l] = statistics(l, false, result.batch_stats);
    detail::parallel_for(batch, threads, [&](int b) { temporal_activate(b, l, temporal_norm_[l]); });
  }
  detail::parallel_for(batch, threads, [&](int b) { classify(b); });

  for (int b = 0; b < batch; ++b) {
    result.probs.push_back(caches_[b].probs);
    result.valid_rows += caches_[b].valid_count;
  }
  if (!labels.empty()) {
    if (static_cast<int>(labels.size()) != batch) throw ShapeError("one label per scenario is required");
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) loss += cross_entropy(caches_[b].probs, labels[b]);
    result.loss = loss / batch;
  }

  if (options_.record_activation_pattern) {
    double min_abs = std::numeric_limits<double>::infinity();
    auto record = [&](double v) {
      result.activation_pattern.push_back(v > 0.0 ? 1 : 0);
      min_abs = std::min(min_abs, std::abs(v));
    };
    for (int b = 0; b < batch; ++b) {
      const ScenarioCache& c = caches_[b];
      for (int t = 0; t < c.nodes.gamma; ++t) {
        const auto& pe = c.positional[t];
        for (Eigen::Index i = 0; i < pe.gate.rows(); ++i) {
          for (Eigen::Index j = 0; j < pe.gate.cols(); ++j) {
            if (pe.gate(i, j) != 0.0) record(pe.preactivation(i, j));
          }
        }
      }
      for (int l = 0; l < cfg_.layers; ++l) {
        for (int t = 0; t < c.nodes.gamma; ++t) {
          const FrameCache& f = c.frames[l][t];
          for (int i = 0; i < c.nodes.nodes(); ++i) {
            if (!c.nodes.present[t][i]) continue;
            for (int k = 0; k < cfg_.hidden; ++k) {
              record(f.z_out(i, k));
              record(f.y(i, k));
            }
          }
        }
      }
    }
    result.min_abs_preactivation = min_abs;
  }

  if (!options_.compute_gradients) return result;
  if (labels.empty()) throw ShapeError("gradients require labels");

  std::vector<Weights> grads(batch, w_.zeros_like());
  std::vector<std::vector<Eigen::MatrixXd>> dx(batch), dfp(batch);
  const double scale = 1.0 / batch;
  detail::parallel_for(batch, threads, [&](int b) {
    backward_head(b, scale, labels[b], grads[b], dx[b]);
    dfp[b].assign(caches_[b].nodes.gamma,
                  Eigen::MatrixXd::Zero(caches_[b].nodes.nodes(), caches_[b].nodes.nodes()));
  });

  const int ch = cfg_.hidden;
  for (int l = cfg_.layers - 1; l >= 0; --l) {
    // Temporal block: dL/dY, reductions for the temporal normalization.
    std::vector<std::vector<Eigen::MatrixXd>> dy(batch), dxs(batch), dz(batch);
    std::vector<Eigen::VectorXd> t_sum(batch, Eigen::VectorXd::Zero(ch)), t_sum_x(batch, Eigen::VectorXd::Zero(ch));
    detail::parallel_for(batch, threads, [&](int b) {
      backward_temporal(b, l, temporal_norm_[l], dx[b], dy[b], grads[b]);
      const ScenarioCache& c = caches_[b];
      if (!normalized()) return;
      const Eigen::VectorXd& gamma_t = w_.layers[l].temporal_scale;
      for (int t = 0; t < c.nodes.gamma; ++t) {
        for (int i = 0; i < c.nodes.nodes(); ++i) {
          if (!c.nodes.present[t][i]) continue;
          const Eigen::VectorXd dxhat = dy[b][t].row(i).transpose().cwiseProduct(gamma_t);
          t_sum[b] += dxhat;
          t_sum_x[b] += dxhat.cwiseProduct(c.frames[l][t].t_hat.row(i).transpose());
        }
      }
    });
    Eigen::VectorXd t_total = Eigen::VectorXd::Zero(ch), t_total_x = Eigen::VectorXd::Zero(ch);
    for (int b = 0; b < batch; ++b) {
      t_total += t_sum[b];
      t_total_x += t_sum_x[b];
    }

    std::vector<Eigen::VectorXd> s_sum(batch, Eigen::VectorXd::Zero(ch)), s_sum_x(batch, Eigen::VectorXd::Zero(ch));
    detail::parallel_for(batch, threads, [&](int b) {
      backward_spatial(b, l, temporal_norm_[l], spatial_norm_[l], t_total, t_total_x, dy[b], dxs[b], dx[b],
                       grads[b]);
      const ScenarioCache& c = caches_[b];
      if (!normalized()) return;
      const Eigen::VectorXd& gamma_s = w_.layers[l].spatial_scale;
      for (int t = 0; t < c.nodes.gamma; ++t) {
        for (int i = 0; i < c.nodes.nodes(); ++i) {
          if (!c.nodes.present[t][i]) continue;
          const Eigen::VectorXd dxhat = dxs[b][t].row(i).transpose().cwiseProduct(gamma_s);
          s_sum[b] += dxhat;
          s_sum_x[b] += dxhat.cwiseProduct(c.frames[l][t].z_hat.row(i).transpose());
        }
      }
    });
    Eigen::VectorXd s_total = Eigen::VectorXd::Zero(ch), s_total_x = Eigen::VectorXd::Zero(ch);
    for (int b = 0; b < batch; ++b) {
      s_total += s_sum[b];
      s_total_x += s_sum_x[b];
    }

    detail::parallel_for(batch, threads, [&](int b) {
      backward_edges(b, l, spatial_norm_[l], s_total, s_total_x, dxs[b], dx[b], dfp[b], grads[b]);
    });
  }

  detail::parallel_for(batch, threads, [&](int b) { backward_input(b, dx[b], dfp[b], grads[b]); });

  result.gradients = w_.zeros_like();
  for (int b = 0; b < batch; ++b) result.gradients += grads[b];
  if (!result.gradients.all_finite()) throw NumericError("non-finite gradient");
  return result;
}

// Input: dx = dL/dX^{l+1}. Output: dx <- residual part of dL/dX^l, dy_out =
// dL/d(normalized temporal sum) per frame. Also the normalization affine
// gradients.
void Engine::backward_temporal(int b, int l, const NormApplied&, std::vector<Eigen::MatrixXd>& dx,
                               std::vector<Eigen::MatrixXd>& dy_out, Weights& g) {
  const ScenarioCache& c = caches_[b];
  LayerParams& gl = g.layers[l];
  dy_out.resize(c.nodes.gamma);
  for (int t = 0; t < c.nodes.gamma; ++t) {
    const FrameCache& f = c.frames[l][t];
    Eigen::MatrixXd dy = dx[t].cwiseProduct((f.y.array() > 0.0).cast<double>().matrix());
    zero_absent_rows(dy, c.nodes.present[t]);
    if (normalized()) {
      gl.temporal_scale += (dy.cwiseProduct(f.t_hat)).colwise().sum().transpose().eval();
      // Absent rows of t_hat hold garbage-free values but dy is zero there.
      gl.temporal_shift += dy.colwise().sum().transpose();
    }
    dx[t] = dy;  // residual path
    dy_out[t] = std::move(dy);
  }
}

// Input: dy = dL/d(normalized temporal sum). Produces dxs = dL/d(z_out)
// after the spatial ReLU, and accumulates temporal kernel gradients.
void Engine::backward_spatial(int b, int l, const NormApplied& tnorm, const NormApplied&,
                              const Eigen::VectorXd& t_sum_dy, const Eigen::VectorXd& t_sum_dy_xhat,
                              std::vector<Eigen::MatrixXd>& dy, std::vector<Eigen::MatrixXd>& dxs_out,
                              std::vector<Eigen::MatrixXd>&, Weights& g) {
  const ScenarioCache& c = caches_[b];
  const LayerParams& lp = w_.layers[l];
  LayerParams& gl = g.layers[l];
  const int gamma = c.nodes.gamma;
  const int n = c.nodes.nodes();
  const int tau = cfg_.tau;
  const int half = tau / 2;
  long count = 0;
  if (normalized() && options_.mode == Mode::Train) {
    for (int bb = 0; bb < size(); ++bb) count += caches_[bb].valid_count;
  }
  std::vector<Eigen::MatrixXd> dtsum(gamma);
  for (int t = 0; t < gamma; ++t) {
    if (normalized()) {
      dtsum[t] = norm_backward(dy[t], c.frames[l][t].t_hat, lp.temporal_scale, tnorm, options_.mode, t_sum_dy,
                               t_sum_dy_xhat, count);
      zero_absent_rows(dtsum[t], c.nodes.present[t]);
    } else {
      dtsum[t] = dy[t];
    }
  }
  std::vector<Eigen::MatrixXd> dxs(gamma, Eigen::MatrixXd::Zero(n, cfg_.hidden));
  for (int t = 0; t < gamma; ++t) {
    for (int o = 0; o < tau; ++o) {
      const int src = t + o - half;
      if (src < 0 || src >= gamma) continue;
      const Eigen::MatrixXd& xs = c.frames[l][src].xs;
      for (int i = 0; i < n; ++i) {
        const int k = o * 2 + (c.nodes.vulnerable[i] ? 1 : 0);
        dxs[src].row(i).noalias() += dtsum[t].row(i) * lp.temporal[k].transpose();
        gl.temporal[k].noalias() += xs.row(i).transpose() * dtsum[t].row(i);
      }
    }
  }
  dxs_out.resize(gamma);
  for (int t = 0; t < gamma; ++t) {
    const FrameCache& f = c.frames[l][t];
    Eigen::MatrixXd d = dxs[t].cwiseProduct((f.z_out.array() > 0.0).cast<double>().matrix());
    zero_absent_rows(d, c.nodes.present[t]);
    if (normalized()) {
      gl.spatial_scale += d.cwiseProduct(f.z_hat).colwise().sum().transpose();
      gl.spatial_shift += d.colwise().sum().transpose();
    }
    dxs_out[t] = std::move(d);
  }
}

// Input: dz_out = dL/d(normalized spatial output, pre-ReLU). Propagates
// through normalization, G X W and the adjacency into dx (which already holds
// the residual contribution), dfp, phi and omega.
void Engine::backward_edges(int b, int l, const NormApplied& snorm, const Eigen::VectorXd& s_sum_dy,
                            const Eigen::VectorXd& s_sum_dy_xhat, std::vector<Eigen::MatrixXd>& dz_out,
                            std::vector<Eigen::MatrixXd>& dx, std::vector<Eigen::MatrixXd>& dfp, Weights& g) {
  const ScenarioCache& c = caches_[b];
  const LayerParams& lp = w_.layers[l];
  LayerParams& gl = g.layers[l];
  const double root_d = std::sqrt(static_cast<double>(cfg_.embed));
  long count = 0;
  if (normalized() && options_.mode == Mode::Train) {
    for (int bb = 0; bb < size(); ++bb) count += caches_[bb].valid_count;
  }
  for (int t = 0; t < c.nodes.gamma; ++t) {
    const FrameCache& f = c.frames[l][t];
    const Eigen::MatrixXd& x = c.x[l][t];
    const auto& present = c.nodes.present[t];
    const PositionalEdges& pe = c.positional[t];
    Eigen::MatrixXd dz;
    if (normalized()) {
      dz = norm_backward(dz_out[t], f.z_hat, lp.spatial_scale, snorm, options_.mode, s_sum_dy, s_sum_dy_xhat,
                         count);
      zero_absent_rows(dz, present);
    } else {
      dz = dz_out[t];
    }
    gl.spatial.noalias() += f.gx.transpose() * dz;
    const Eigen::MatrixXd dgx = dz * lp.spatial.transpose();
    const Eigen::MatrixXd dg = dgx * x.transpose();
    Eigen::MatrixXd dxt = f.adj.adjacency.transpose() * dgx;

    // Through the row normalization G = w / sum(w).
    const Eigen::Index n = dg.rows();
    Eigen::MatrixXd drel = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!present[i] || f.adj.fallback[i]) continue;
      const double sum = f.adj.row_sum[i];
      const double dot = dg.row(i).dot(f.adj.adjacency.row(i));
      double row_max = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (pe.gate(i, j) != 0.0) row_max = std::max(row_max, f.relations(i, j));
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (pe.gate(i, j) == 0.0) continue;
        const double dw = (dg(i, j) - dot) / sum;
        drel(i, j) = dw * f.adj.numerator(i, j);
        dfp[t](i, j) += dw * std::exp(f.relations(i, j) - row_max);
      }
    }
    const Eigen::MatrixXd dp = drel * f.q / root_d;
    const Eigen::MatrixXd dq = drel.transpose() * f.p / root_d;
    gl.phi.noalias() += x.transpose() * dp;
    gl.omega.noalias() += x.transpose() * dq;
    dxt.noalias() += dp * lp.phi.transpose();
    dxt.noalias() += dq * lp.omega.transpose();
    dxt += dx[t];  // residual
    zero_absent_rows(dxt, present);
    dx[t] = std::move(dxt);
  }
}

void Engine::backward_input(int b, const std::vector<Eigen::MatrixXd>& dx, const std::vector<Eigen::MatrixXd>& dfp,
                            Weights& g) {
  const ScenarioCache& c = caches_[b];
  const EdgeParams& e = w_.edge;
  const Eigen::Index k = e.fourier.rows();
  for (int t = 0; t < c.nodes.gamma; ++t) {
    g.input.noalias() += c.fused[t].transpose() * dx[t];
    const PositionalEdges& pe = c.positional[t];
    const auto& pos = c.nodes.positions[t];
    for (Eigen::Index i = 0; i < pe.gate.rows(); ++i) {
      for (Eigen::Index j = 0; j < pe.gate.cols(); ++j) {
        if (pe.gate(i, j) == 0.0 || pe.preactivation(i, j) <= 0.0 || dfp[t](i, j) == 0.0) continue;
        const double du = dfp[t](i, j);
        const bool mi = c.nodes.vulnerable[i];
        const bool mj = c.nodes.vulnerable[j];
        const Eigen::VectorXd emb = embed_position(pos[i], mi, e) + embed_position(pos[j], mj, e);
        const Eigen::VectorXd s = (2.0 * std::numbers::pi) * (e.fourier * emb);
        const Eigen::VectorXd cos_s = s.unaryExpr([](double x) { return std::cos(x); });
        const Eigen::VectorXd sin_s = s.unaryExpr([](double x) { return std::sin(x); });
        g.edge.w_p.head(k) += du * cos_s;
        g.edge.w_p.tail(k) += du * sin_s;
        const Eigen::VectorXd ds = du * (-sin_s.cwiseProduct(e.w_p.head(k)) + cos_s.cwiseProduct(e.w_p.tail(k)));
        const Eigen::VectorXd demb = (2.0 * std::numbers::pi) * (e.fourier.transpose() * ds);
        g.edge.theta_w[mi ? 1 : 0].noalias() += pos[i].vec() * demb.transpose();
        g.edge.theta_b[mi ? 1 : 0] += demb;
        g.edge.theta_w[mj ? 1 : 0].noalias() += pos[j].vec() * demb.transpose();
        g.edge.theta_b[mj ? 1 : 0] += demb;
      }
    }
  }
}

}  // namespace

BatchResult forward_backward(std::span<const Scenario* const> batch, std::span<const int> labels,
                             const Model& model, const BatchOptions& options) {
  if (batch.empty()) throw ShapeError("forward_backward: empty batch");
  Engine engine(batch, model, options);
  return engine.run(labels);
}

Eigen::VectorXd forward(const Scenario& s, const Model& model, Mode mode) {
  const Scenario* one[] = {&s};
  BatchOptions opts;
  opts.mode = mode;
  opts.compute_gradients = false;
  return forward_backward(one, {}, model, opts).probs.front();
}

ForwardTrace forward_trace(const Scenario& s, const Model& model, Mode mode) {
  const Scenario* one[] = {&s};
  BatchOptions opts;
  opts.mode = mode;
  opts.compute_gradients = false;
  Engine engine(one, model, opts);
  ForwardTrace trace;
  trace.probs = engine.run({}).probs.front();
  const ScenarioCache& c = engine.caches().front();
  for (const auto& layer : c.frames) {
    AdjacencyTensor g;
    g.valid = c.nodes.present;
    g.agent_ids = c.nodes.agent_ids;
    for (const auto& f : layer) g.frames.push_back(f.adj.adjacency);
    trace.adjacency.push_back(std::move(g));
  }
  return trace;
}

}  // namespace riskgraph
