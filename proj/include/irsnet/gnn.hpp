#pragma once

#include <string>
#include <utility>
#include <vector>

#include "irsnet/channel.hpp"
#include "irsnet/nn.hpp"
#include "irsnet/rates.hpp"

namespace irsnet {

// Keeps the unit-modulus and power normalizations finite at the measure-zero
// origin without visibly perturbing feasibility at representable magnitudes.
inline constexpr double kNormGuard = 1e-20;

// Architecture and physics constants of the learned beamforming policy.
// Everything a checkpoint needs to rebuild the network lives here.
struct GnnConfig {
  int bs_antennas = 4;
  int irs_elements = 16;
  int subframes = 8;
  int depth = 2;
  int embed_dim = 128;
  int hidden_init = 256;
  int hidden_update = 128;
  bool use_locations = false;
  Utility utility = Utility::sum;
  double downlink_power_mw = 100.0;
  double downlink_noise_mw = 3.16227766016838e-9;

  int pilot_feature_dim() const { return 2 * bs_antennas * subframes; }
  int feature_dim() const { return pilot_feature_dim() + (use_locations ? 3 : 0); }

  void validate() const {
    if (bs_antennas < 1 || irs_elements < 1 || subframes < 1)
      throw ConfigError("gnn config requires positive physical dimensions");
    if (depth < 1) throw ConfigError("gnn config requires at least one update round");
    if (embed_dim < 1 || hidden_init < 1 || hidden_update < 1)
      throw ConfigError("gnn config requires positive layer widths");
    if (!(downlink_power_mw > 0.0) || !(downlink_noise_mw > 0.0))
      throw ConfigError("gnn config requires positive power and noise");
  }

  uint64_t hash() const {
    Hasher h;
    h.i64(bs_antennas).i64(irs_elements).i64(subframes).i64(depth);
    h.i64(embed_dim).i64(hidden_init).i64(hidden_update);
    h.i64(use_locations ? 1 : 0).i64(utility == Utility::sum ? 0 : 1);
    h.f64(downlink_power_mw).f64(downlink_noise_mw);
    return h.digest();
  }
};

// One message-passing round. The user-side blocks are shared across users,
// which is what makes the policy permutation equivariant.
struct GnnLayerParams {
  Mlp surface_state;    // transforms the previous surface embedding
  Mlp surface_message;  // per-user messages aggregated into the surface node
  Mlp surface_update;   // combines [surface state | mean of user messages]
  Mlp user_message;     // per-user messages exchanged between users
  Mlp user_update;      // combines [surface state | own state | max of others]
};

struct PolicyParams {
  Mlp user_encoder;     // pilot features -> embedding
  Mlp surface_encoder;  // mean user embedding -> surface embedding
  std::vector<GnnLayerParams> layers;
  DenseLayer phase_head;  // surface embedding -> [Re v | Im v]
  DenseLayer beam_head;   // user embedding -> [Re w | Im w]
  // Fitted input normalizers; persisted with checkpoints, not trained.
  double input_scale_pilots = 1.0;
  double input_scale_locations = 1.0;
};

template <class F>
void visit_layer(GnnLayerParams& l, const std::string& name, F&& f) {
  visit_mlp(l.surface_state, name + ".surface_state", f);
  visit_mlp(l.surface_message, name + ".surface_message", f);
  visit_mlp(l.surface_update, name + ".surface_update", f);
  visit_mlp(l.user_message, name + ".user_message", f);
  visit_mlp(l.user_update, name + ".user_update", f);
}

template <class F>
void visit_policy(PolicyParams& p, F&& f) {
  visit_mlp(p.user_encoder, "user_encoder", f);
  visit_mlp(p.surface_encoder, "surface_encoder", f);
  for (std::size_t d = 0; d < p.layers.size(); ++d)
    visit_layer(p.layers[d], "layer" + std::to_string(d), f);
  visit_dense(p.phase_head, "phase_head", f);
  visit_dense(p.beam_head, "beam_head", f);
}

inline std::vector<MatR*> collect_params(PolicyParams& p) {
  std::vector<MatR*> out;
  visit_policy(p, [&](const std::string&, MatR& m) { out.push_back(&m); });
  return out;
}

inline std::vector<const MatR*> collect_params_const(PolicyParams& p) {
  std::vector<const MatR*> out;
  visit_policy(p, [&](const std::string&, MatR& m) { out.push_back(&m); });
  return out;
}

inline PolicyParams init_policy(const GnnConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::substream(seed, 0xA11);
  PolicyParams p;
  const int z = cfg.embed_dim;
  init_mlp(p.user_encoder, cfg.feature_dim(), cfg.hidden_init, z, rng);
  init_mlp(p.surface_encoder, z, cfg.hidden_init, z, rng);
  p.layers.resize(cfg.depth);
  for (auto& l : p.layers) {
    init_mlp(l.surface_state, z, cfg.hidden_update, z, rng);
    init_mlp(l.surface_message, z, cfg.hidden_update, z, rng);
    init_mlp(l.surface_update, 2 * z, cfg.hidden_update, z, rng);
    init_mlp(l.user_message, z, cfg.hidden_update, z, rng);
    init_mlp(l.user_update, 3 * z, cfg.hidden_update, z, rng);
  }
  init_dense(p.phase_head, z, 2 * cfg.irs_elements, 1.0, rng);
  init_dense(p.beam_head, z, 2 * cfg.bs_antennas, 1.0, rng);
  return p;
}

inline PolicyParams zeros_like(const PolicyParams& p) {
  PolicyParams g = p;
  visit_policy(g, [](const std::string&, MatR& m) { m.setZero(); });
  return g;
}

inline void zero_params(PolicyParams& g) {
  visit_policy(g, [](const std::string&, MatR& m) { m.setZero(); });
}

// ---- aggregation helpers (rows are user-major: row = sample * users + user)

inline MatR mean_over_users(const MatR& rows, int batch, int users) {
  MatR out = MatR::Zero(batch, rows.cols());
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < users; ++k)
      out.row(b) += rows.row(static_cast<Eigen::Index>(b) * users + k);
    out.row(b) /= static_cast<double>(users);
  }
  return out;
}

inline void mean_over_users_backward(const MatR& dmean, int users, MatR& drows) {
  const double inv = 1.0 / static_cast<double>(users);
  for (Eigen::Index b = 0; b < dmean.rows(); ++b)
    for (int k = 0; k < users; ++k) drows.row(b * users + k) += inv * dmean.row(b);
}

inline MatR repeat_per_user(const MatR& per_sample, int users) {
  MatR out(per_sample.rows() * users, per_sample.cols());
  for (Eigen::Index b = 0; b < per_sample.rows(); ++b)
    for (int k = 0; k < users; ++k) out.row(b * users + k) = per_sample.row(b);
  return out;
}

inline void repeat_per_user_backward(const MatR& drows, int users, MatR& dper_sample) {
  for (Eigen::Index b = 0; b < dper_sample.rows(); ++b)
    for (int k = 0; k < users; ++k) dper_sample.row(b) += drows.row(b * users + k);
}

// Entry-wise max over the other users of the same sample; zero (argmax -1)
// when the user is alone. Ties resolve to the lowest user index.
inline MatR max_over_other_users(const MatR& rows, int batch, int users, Eigen::MatrixXi& argmax) {
  MatR out = MatR::Zero(rows.rows(), rows.cols());
  argmax.setConstant(rows.rows(), rows.cols(), -1);
  if (users == 1) return out;
  for (Eigen::Index c = 0; c < rows.cols(); ++c)
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index base = static_cast<Eigen::Index>(b) * users;
      for (int k = 0; k < users; ++k) {
        double best = 0.0;
        int best_j = -1;
        for (int j = 0; j < users; ++j) {
          if (j == k) continue;
          const double val = rows(base + j, c);
          if (best_j < 0 || val > best) {
            best = val;
            best_j = j;
          }
        }
        out(base + k, c) = best;
        argmax(base + k, c) = best_j;
      }
    }
  return out;
}

inline void max_over_other_users_backward(const MatR& dout, const Eigen::MatrixXi& argmax,
                                          int users, MatR& drows) {
  for (Eigen::Index c = 0; c < dout.cols(); ++c)
    for (Eigen::Index r = 0; r < dout.rows(); ++r) {
      const int j = argmax(r, c);
      if (j < 0) continue;
      const Eigen::Index base = (r / users) * users;
      drows(base + j, c) += dout(r, c);
    }
}

// ---- batched forward pass

struct PolicyBatch {
  int batch = 0;
  int users = 0;
  MatR features;                     // (batch*users) x feature_dim
  std::vector<ChannelSet> channels;  // size batch; required for loss/gradient only
};

struct PolicyLayerCache {
  MlpCache state, message_s, update_s, message_u, update_u;
  Eigen::MatrixXi argmax;
};

struct PolicyCache {
  int batch = 0, users = 0;
  MlpCache user_encoder, surface_encoder;
  std::vector<PolicyLayerCache> layers;
  MatR final_user;          // (batch*users) x embed, feeds the beam head
  MatR final_surface;       // batch x embed, feeds the phase head
  MatR phase_raw;           // batch x 2N
  MatR beam_raw;            // (batch*users) x 2M
  MatR phase_norm;          // batch x N, per-element norms including the guard
  VecR beam_norm;           // batch, Frobenius norms including the guard
  MatR phase_re, phase_im;  // batch x N, normalized surface response
};

// Runs the trunk and both heads, leaving normalized outputs in the cache.
// The graph treats the user count as data, so the same parameters serve any
// number of users.
inline void policy_forward(const GnnConfig& cfg, const PolicyParams& p, const PolicyBatch& batch,
                           PolicyCache& c) {
  const int b_count = batch.batch;
  const int users = batch.users;
  if (users < 1 || b_count < 1) throw ConfigError("policy_forward needs a non-empty batch");
  if (batch.features.rows() != static_cast<Eigen::Index>(b_count) * users ||
      batch.features.cols() != cfg.feature_dim())
    throw ConfigError("policy_forward: feature matrix shape mismatch");
  if (static_cast<int>(p.layers.size()) != cfg.depth)
    throw ConfigError("policy_forward: parameter depth mismatch");

  c.batch = b_count;
  c.users = users;
  c.layers.resize(p.layers.size());

  MatR scaled = batch.features;
  scaled.leftCols(cfg.pilot_feature_dim()) /= p.input_scale_pilots;
  if (cfg.use_locations) scaled.rightCols(3) /= p.input_scale_locations;

  MatR zu = mlp_forward(p.user_encoder, std::move(scaled), c.user_encoder);
  MatR zi = mlp_forward(p.surface_encoder, mean_over_users(zu, b_count, users), c.surface_encoder);

  for (std::size_t d = 0; d < p.layers.size(); ++d) {
    const GnnLayerParams& l = p.layers[d];
    PolicyLayerCache& lc = c.layers[d];

    MatR carried = mlp_forward(l.surface_state, std::move(zi), lc.state);
    MatR messages_s = mlp_forward(l.surface_message, zu, lc.message_s);

    MatR surface_in(b_count, 2 * carried.cols());
    surface_in << carried, mean_over_users(messages_s, b_count, users);
    MatR zi_next = mlp_forward(l.surface_update, std::move(surface_in), lc.update_s);

    MatR messages_u = mlp_forward(l.user_message, zu, lc.message_u);
    MatR pooled = max_over_other_users(messages_u, b_count, users, lc.argmax);

    MatR user_in(static_cast<Eigen::Index>(b_count) * users, 3 * carried.cols());
    user_in << repeat_per_user(carried, users), zu, pooled;
    zu = mlp_forward(l.user_update, std::move(user_in), lc.update_u);
    zi = std::move(zi_next);
  }

  c.final_user = std::move(zu);
  c.final_surface = std::move(zi);
  c.phase_raw = dense_forward(p.phase_head, c.final_surface);
  c.beam_raw = dense_forward(p.beam_head, c.final_user);

  const int n = cfg.irs_elements;
  c.phase_norm.resize(b_count, n);
  c.phase_re.resize(b_count, n);
  c.phase_im.resize(b_count, n);
  for (int b = 0; b < b_count; ++b)
    for (int i = 0; i < n; ++i) {
      const double re = c.phase_raw(b, i), im = c.phase_raw(b, n + i);
      const double s = std::sqrt(re * re + im * im + kNormGuard);
      c.phase_norm(b, i) = s;
      c.phase_re(b, i) = re / s;
      c.phase_im(b, i) = im / s;
    }
  c.beam_norm.resize(b_count);
  for (int b = 0; b < b_count; ++b) {
    double sq = kNormGuard;
    for (int k = 0; k < users; ++k)
      sq += c.beam_raw.row(static_cast<Eigen::Index>(b) * users + k).squaredNorm();
    c.beam_norm(b) = std::sqrt(sq);
  }
}

// Normalized decision of sample b in complex form.
inline Solution extract_solution(const GnnConfig& cfg, const PolicyCache& c, int b) {
  const int n = cfg.irs_elements, m = cfg.bs_antennas;
  Solution sol;
  sol.phases.resize(n);
  for (int i = 0; i < n; ++i) sol.phases(i) = cd(c.phase_re(b, i), c.phase_im(b, i));
  sol.beams.resize(m, c.users);
  const double amp = std::sqrt(cfg.downlink_power_mw) / c.beam_norm(b);
  for (int k = 0; k < c.users; ++k) {
    const Eigen::Index row = static_cast<Eigen::Index>(b) * c.users + k;
    for (int j = 0; j < m; ++j)
      sol.beams(j, k) = amp * cd(c.beam_raw(row, j), c.beam_raw(row, m + j));
  }
  return sol;
}

// Pilot observations (and optionally locations) to one feature row per user:
// [vec Re Y | vec Im Y | x y z] with column-major vectorization.
inline MatR build_features(const GnnConfig& cfg, const std::vector<MatC>& per_user,
                           const std::vector<Vec3>* locations) {
  const int users = static_cast<int>(per_user.size());
  if (users < 1) throw ConfigError("build_features needs at least one user");
  if (cfg.use_locations && (locations == nullptr || static_cast<int>(locations->size()) != users))
    throw ConfigError("build_features: this configuration requires user locations");
  const int mt = cfg.bs_antennas * cfg.subframes;
  MatR rows(users, cfg.feature_dim());
  for (int k = 0; k < users; ++k) {
    const MatC& y = per_user[k];
    if (y.rows() != cfg.bs_antennas || y.cols() != cfg.subframes)
      throw ConfigError("build_features: observation shape mismatch");
    int idx = 0;
    for (Eigen::Index col = 0; col < y.cols(); ++col)
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        rows(k, idx) = y(r, col).real();
        rows(k, mt + idx) = y(r, col).imag();
        ++idx;
      }
    if (cfg.use_locations) {
      rows(k, 2 * mt + 0) = (*locations)[k].x;
      rows(k, 2 * mt + 1) = (*locations)[k].y;
      rows(k, 2 * mt + 2) = (*locations)[k].z;
    }
  }
  return rows;
}

// Single-sample inference.
inline Solution policy_decide(const GnnConfig& cfg, const PolicyParams& p,
                              const std::vector<MatC>& per_user,
                              const std::vector<Vec3>* locations = nullptr) {
  PolicyBatch batch;
  batch.batch = 1;
  batch.users = static_cast<int>(per_user.size());
  batch.features = build_features(cfg, per_user, locations);
  PolicyCache cache;
  policy_forward(cfg, p, batch, cache);
  return extract_solution(cfg, cache, 0);
}

// ---- loss and hand-written gradient

struct PolicyEval {
  double loss = 0.0;
  std::vector<double> utilities;  // per sample
  MatR rates;                     // batch x users
};

// Mean negative utility over the batch. Rates ride the real-arithmetic path,
// the same algebra the backward pass differentiates.
inline PolicyEval policy_loss(const GnnConfig& cfg, const PolicyParams& p, const PolicyBatch& batch,
                              PolicyCache& c) {
  if (static_cast<int>(batch.channels.size()) != batch.batch)
    throw ConfigError("policy_loss needs one channel set per sample");
  policy_forward(cfg, p, batch, c);

  const int users = batch.users, m = cfg.bs_antennas;
  PolicyEval eval;
  eval.rates.resize(batch.batch, users);
  eval.utilities.resize(batch.batch);
  const double amp = std::sqrt(cfg.downlink_power_mw);

  std::vector<MatR> cas_re(users), cas_im(users);
  std::vector<VecR> dir_re(users), dir_im(users);
  for (int b = 0; b < batch.batch; ++b) {
    const ChannelSet& cs = batch.channels[b];
    for (int k = 0; k < users; ++k) {
      cas_re[k] = cs.cascade[k].real();
      cas_im[k] = cs.cascade[k].imag();
      dir_re[k] = cs.user_bs[k].real();
      dir_im[k] = cs.user_bs[k].imag();
    }
    MatR beams_re(m, users), beams_im(m, users);
    const double scale = amp / c.beam_norm(b);
    for (int k = 0; k < users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * users + k;
      for (int j = 0; j < m; ++j) {
        beams_re(j, k) = scale * c.beam_raw(row, j);
        beams_im(j, k) = scale * c.beam_raw(row, m + j);
      }
    }
    const VecR ph_re = c.phase_re.row(b).transpose();
    const VecR ph_im = c.phase_im.row(b).transpose();
    for (int k = 0; k < users; ++k)
      eval.rates(b, k) = user_rate_real(cas_re, cas_im, dir_re, dir_im, beams_re, beams_im, ph_re,
                                        ph_im, cfg.downlink_noise_mw, k);
    const double util =
        cfg.utility == Utility::sum ? eval.rates.row(b).sum() : eval.rates.row(b).minCoeff();
    eval.utilities[b] = util;
    eval.loss -= util;
  }
  eval.loss /= batch.batch;
  if (!std::isfinite(eval.loss)) throw NumericError("policy loss is not finite");
  return eval;
}

// Gradient of policy_loss with respect to every trained tensor, accumulated
// into `grads` (zero them first). Returns the forward evaluation.
inline PolicyEval policy_gradient(const GnnConfig& cfg, const PolicyParams& p,
                                  const PolicyBatch& batch, PolicyParams& grads, PolicyCache& c) {
  PolicyEval eval = policy_loss(cfg, p, batch, c);

  const int users = batch.users, m = cfg.bs_antennas, n = cfg.irs_elements;
  const int z = cfg.embed_dim;
  const double amp = std::sqrt(cfg.downlink_power_mw);
  const double inv_b = 1.0 / batch.batch;
  const double inv_ln2 = 1.0 / std::log(2.0);

  MatR d_phase_raw = MatR::Zero(batch.batch, 2 * n);
  MatR d_beam_raw = MatR::Zero(static_cast<Eigen::Index>(batch.batch) * users, 2 * m);

  for (int b = 0; b < batch.batch; ++b) {
    const ChannelSet& cs = batch.channels[b];

    VecC v(n);
    for (int i = 0; i < n; ++i) v(i) = cd(c.phase_re(b, i), c.phase_im(b, i));
    MatC w(m, users);
    const double scale = amp / c.beam_norm(b);
    for (int k = 0; k < users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * users + k;
      for (int j = 0; j < m; ++j)
        w(j, k) = scale * cd(c.beam_raw(row, j), c.beam_raw(row, m + j));
    }

    MatC geff(m, users);
    for (int k = 0; k < users; ++k) geff.col(k) = cs.user_bs[k] + cs.cascade[k] * v;
    MatC s = geff.transpose() * w;  // s(k, i) = g_k^T w_i

    VecR drate = VecR::Zero(users);
    if (cfg.utility == Utility::sum) {
      drate.setConstant(-inv_b);
    } else {
      int arg = 0;
      for (int k = 1; k < users; ++k)
        if (eval.rates(b, k) < eval.rates(b, arg)) arg = k;
      drate(arg) = -inv_b;
    }

    // dLoss/d|s(k,i)|^2
    MatR coeff(users, users);
    for (int k = 0; k < users; ++k) {
      double denom = cfg.downlink_noise_mw;
      for (int i = 0; i < users; ++i)
        if (i != k) denom += std::norm(s(k, i));
      const double total = denom + std::norm(s(k, k));
      for (int i = 0; i < users; ++i)
        coeff(k, i) = i == k ? drate(k) * inv_ln2 / total
                             : drate(k) * inv_ln2 * (1.0 / total - 1.0 / denom);
    }

    // Complex gradients (d/dRe + j d/dIm) of the normalized outputs.
    MatC weighted = coeff.cast<cd>().cwiseProduct(s);
    MatC dw = 2.0 * geff.conjugate() * weighted;
    VecC dv = VecC::Zero(n);
    for (int k = 0; k < users; ++k) {
      VecC ek = w * weighted.row(k).adjoint();
      dv += 2.0 * (cs.cascade[k].transpose() * ek).conjugate();
    }

    // Unit-modulus normalization backward.
    for (int i = 0; i < n; ++i) {
      const double re = c.phase_raw(b, i), im = c.phase_raw(b, n + i);
      const double sn = c.phase_norm(b, i);
      const double s3 = sn * sn * sn;
      const double dre = dv(i).real(), dim = dv(i).imag();
      d_phase_raw(b, i) += (dre * (im * im + kNormGuard) - dim * re * im) / s3;
      d_phase_raw(b, n + i) += (-dre * re * im + dim * (re * re + kNormGuard)) / s3;
    }

    // Power normalization backward: W = amp * Z / ||Z||_F per sample.
    double t = 0.0;
    const double nb = c.beam_norm(b);
    for (int k = 0; k < users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * users + k;
      for (int j = 0; j < m; ++j)
        t += c.beam_raw(row, j) * dw(j, k).real() + c.beam_raw(row, m + j) * dw(j, k).imag();
    }
    const double f = amp / nb;
    for (int k = 0; k < users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * users + k;
      for (int j = 0; j < m; ++j) {
        d_beam_raw(row, j) += f * (dw(j, k).real() - c.beam_raw(row, j) * t / (nb * nb));
        d_beam_raw(row, m + j) += f * (dw(j, k).imag() - c.beam_raw(row, m + j) * t / (nb * nb));
      }
    }
  }

  // Heads back to the final embeddings.
  MatR d_zi = MatR::Zero(batch.batch, z);
  MatR d_zu = MatR::Zero(static_cast<Eigen::Index>(batch.batch) * users, z);
  dense_backward(p.phase_head, c.final_surface, d_phase_raw, grads.phase_head, &d_zi);
  dense_backward(p.beam_head, c.final_user, d_beam_raw, grads.beam_head, &d_zu);

  // Message-passing rounds in reverse.
  for (int d = cfg.depth - 1; d >= 0; --d) {
    const GnnLayerParams& l = p.layers[d];
    GnnLayerParams& gl = grads.layers[d];
    const PolicyLayerCache& lc = c.layers[d];

    MatR d_user_in = MatR::Zero(static_cast<Eigen::Index>(batch.batch) * users, 3 * z);
    mlp_backward(l.user_update, lc.update_u, d_zu, gl.user_update, &d_user_in);

    MatR d_surface_in = MatR::Zero(batch.batch, 2 * z);
    mlp_backward(l.surface_update, lc.update_s, d_zi, gl.surface_update, &d_surface_in);

    MatR d_zu_prev = d_user_in.middleCols(z, z);

    MatR d_messages_u = MatR::Zero(static_cast<Eigen::Index>(batch.batch) * users, z);
    max_over_other_users_backward(d_user_in.rightCols(z), lc.argmax, users, d_messages_u);
    mlp_backward(l.user_message, lc.message_u, d_messages_u, gl.user_message, &d_zu_prev);

    MatR d_messages_s = MatR::Zero(static_cast<Eigen::Index>(batch.batch) * users, z);
    mean_over_users_backward(d_surface_in.rightCols(z), users, d_messages_s);
    mlp_backward(l.surface_message, lc.message_s, d_messages_s, gl.surface_message, &d_zu_prev);

    MatR d_carried = d_surface_in.leftCols(z);
    repeat_per_user_backward(d_user_in.leftCols(z), users, d_carried);

    MatR d_zi_prev = MatR::Zero(batch.batch, z);
    mlp_backward(l.surface_state, lc.state, d_carried, gl.surface_state, &d_zi_prev);

    d_zu = std::move(d_zu_prev);
    d_zi = std::move(d_zi_prev);
  }

  // Initial embeddings: the surface encoder feeds from the mean of the user
  // encoder outputs, so its input gradient folds back into the user rows.
  MatR d_mean0 = MatR::Zero(batch.batch, z);
  mlp_backward(p.surface_encoder, c.surface_encoder, d_zi, grads.surface_encoder, &d_mean0);
  mean_over_users_backward(d_mean0, users, d_zu);
  mlp_backward(p.user_encoder, c.user_encoder, d_zu, grads.user_encoder, nullptr);

  return eval;
}

// ---- channel-estimation variant: same user trunk, no surface node

struct EstLayerParams {
  Mlp user_message;
  Mlp user_update;  // combines [own state | max of others]
};

struct EstParams {
  Mlp user_encoder;
  std::vector<EstLayerParams> layers;
  DenseLayer channel_head;  // embedding -> [vec Re F | vec Im F]
  double input_scale_pilots = 1.0;
  double input_scale_locations = 1.0;
  // Fitted output scalings: the direct column and the cascade columns of the
  // combined channel live on very different magnitudes.
  double out_scale_direct = 1.0;
  double out_scale_cascade = 1.0;
};

template <class F>
void visit_estimator(EstParams& p, F&& f) {
  visit_mlp(p.user_encoder, "user_encoder", f);
  for (std::size_t d = 0; d < p.layers.size(); ++d) {
    const std::string name = "layer" + std::to_string(d);
    visit_mlp(p.layers[d].user_message, name + ".user_message", f);
    visit_mlp(p.layers[d].user_update, name + ".user_update", f);
  }
  visit_dense(p.channel_head, "channel_head", f);
}

inline std::vector<MatR*> collect_params(EstParams& p) {
  std::vector<MatR*> out;
  visit_estimator(p, [&](const std::string&, MatR& m) { out.push_back(&m); });
  return out;
}

inline std::vector<const MatR*> collect_params_const(EstParams& p) {
  std::vector<const MatR*> out;
  visit_estimator(p, [&](const std::string&, MatR& m) { out.push_back(&m); });
  return out;
}

inline EstParams init_estimator(const GnnConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::substream(seed, 0xE57);
  EstParams p;
  const int z = cfg.embed_dim;
  init_mlp(p.user_encoder, cfg.feature_dim(), cfg.hidden_init, z, rng);
  p.layers.resize(cfg.depth);
  for (auto& l : p.layers) {
    init_mlp(l.user_message, z, cfg.hidden_update, z, rng);
    init_mlp(l.user_update, 2 * z, cfg.hidden_update, z, rng);
  }
  init_dense(p.channel_head, z, 2 * cfg.bs_antennas * (cfg.irs_elements + 1), 1.0, rng);
  return p;
}

inline EstParams zeros_like(const EstParams& p) {
  EstParams g = p;
  visit_estimator(g, [](const std::string&, MatR& m) { m.setZero(); });
  return g;
}

inline void zero_params(EstParams& g) {
  visit_estimator(g, [](const std::string&, MatR& m) { m.setZero(); });
}

struct EstLayerCache {
  MlpCache message, update;
  Eigen::MatrixXi argmax;
};

struct EstCache {
  int batch = 0, users = 0;
  MlpCache encoder;
  std::vector<EstLayerCache> layers;
  MatR final_user;
  MatR raw;  // (batch*users) x 2M(N+1)
};

inline void est_forward(const GnnConfig& cfg, const EstParams& p, const PolicyBatch& batch,
                        EstCache& c) {
  if (batch.batch < 1 || batch.users < 1)
    throw ConfigError("est_forward needs a non-empty batch");
  if (batch.features.rows() != static_cast<Eigen::Index>(batch.batch) * batch.users ||
      batch.features.cols() != cfg.feature_dim())
    throw ConfigError("est_forward: feature matrix shape mismatch");
  if (static_cast<int>(p.layers.size()) != cfg.depth)
    throw ConfigError("est_forward: parameter depth mismatch");

  c.batch = batch.batch;
  c.users = batch.users;
  c.layers.resize(p.layers.size());

  MatR scaled = batch.features;
  scaled.leftCols(cfg.pilot_feature_dim()) /= p.input_scale_pilots;
  if (cfg.use_locations) scaled.rightCols(3) /= p.input_scale_locations;

  MatR zu = mlp_forward(p.user_encoder, std::move(scaled), c.encoder);
  for (std::size_t d = 0; d < p.layers.size(); ++d) {
    EstLayerCache& lc = c.layers[d];
    MatR messages = mlp_forward(p.layers[d].user_message, zu, lc.message);
    MatR pooled = max_over_other_users(messages, batch.batch, batch.users, lc.argmax);
    MatR user_in(zu.rows(), 2 * zu.cols());
    user_in << zu, pooled;
    zu = mlp_forward(p.layers[d].user_update, std::move(user_in), lc.update);
  }
  c.final_user = std::move(zu);
  c.raw = dense_forward(p.channel_head, c.final_user);
}

// Estimated combined channel for one cache row. Column 0 is the direct path,
// the rest the cascade, each under its fitted scaling.
inline MatC est_extract(const GnnConfig& cfg, const EstParams& p, const EstCache& c,
                        Eigen::Index row) {
  const int m = cfg.bs_antennas;
  const int cols = cfg.irs_elements + 1;
  const int half = m * cols;
  MatC f(m, cols);
  for (int j = 0; j < cols; ++j) {
    const double sc = j == 0 ? p.out_scale_direct : p.out_scale_cascade;
    for (int r = 0; r < m; ++r) {
      const int idx = j * m + r;
      f(r, j) = sc * cd(c.raw(row, idx), c.raw(row, half + idx));
    }
  }
  return f;
}

// Mean squared Frobenius error against the true combined channels.
inline double est_loss(const GnnConfig& cfg, const EstParams& p, const PolicyBatch& batch,
                       EstCache& c) {
  if (static_cast<int>(batch.channels.size()) != batch.batch)
    throw ConfigError("est_loss needs one channel set per sample");
  est_forward(cfg, p, batch, c);
  double total = 0.0;
  for (int b = 0; b < batch.batch; ++b)
    for (int k = 0; k < batch.users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * batch.users + k;
      total += (est_extract(cfg, p, c, row) - batch.channels[b].combined(k)).squaredNorm();
    }
  const double loss = total / (static_cast<double>(batch.batch) * batch.users);
  if (!std::isfinite(loss)) throw NumericError("estimator loss is not finite");
  return loss;
}

inline double est_gradient(const GnnConfig& cfg, const EstParams& p, const PolicyBatch& batch,
                           EstParams& grads, EstCache& c) {
  const double loss = est_loss(cfg, p, batch, c);

  const int m = cfg.bs_antennas;
  const int cols = cfg.irs_elements + 1;
  const int half = m * cols;
  const double wgt = 2.0 / (static_cast<double>(batch.batch) * batch.users);

  MatR d_raw = MatR::Zero(c.raw.rows(), c.raw.cols());
  for (int b = 0; b < batch.batch; ++b)
    for (int k = 0; k < batch.users; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * batch.users + k;
      const MatC diff = est_extract(cfg, p, c, row) - batch.channels[b].combined(k);
      for (int j = 0; j < cols; ++j) {
        const double sc = j == 0 ? p.out_scale_direct : p.out_scale_cascade;
        for (int r = 0; r < m; ++r) {
          const int idx = j * m + r;
          d_raw(row, idx) = wgt * sc * diff(r, j).real();
          d_raw(row, half + idx) = wgt * sc * diff(r, j).imag();
        }
      }
    }

  MatR d_zu = MatR::Zero(c.final_user.rows(), c.final_user.cols());
  dense_backward(p.channel_head, c.final_user, d_raw, grads.channel_head, &d_zu);

  for (int d = cfg.depth - 1; d >= 0; --d) {
    const EstLayerCache& lc = c.layers[d];
    const int z = cfg.embed_dim;
    MatR d_user_in = MatR::Zero(d_zu.rows(), 2 * z);
    mlp_backward(p.layers[d].user_update, lc.update, d_zu, grads.layers[d].user_update, &d_user_in);

    MatR d_zu_prev = d_user_in.leftCols(z);
    MatR d_messages = MatR::Zero(d_zu.rows(), z);
    max_over_other_users_backward(d_user_in.rightCols(z), lc.argmax, batch.users, d_messages);
    mlp_backward(p.layers[d].user_message, lc.message, d_messages, grads.layers[d].user_message,
                 &d_zu_prev);
    d_zu = std::move(d_zu_prev);
  }
  mlp_backward(p.user_encoder, c.encoder, d_zu, grads.user_encoder, nullptr);
  return loss;
}

// ---- calibration helpers

inline double rms_or_one(double sum_sq, Eigen::Index count) {
  if (count < 1) return 1.0;
  const double rms = std::sqrt(sum_sq / static_cast<double>(count));
  return rms > 0.0 ? rms : 1.0;
}

// Root-mean-square normalizers for the pilot block and (when present) the
// location block, fitted on a calibration batch of raw features.
inline void fit_input_scales(const GnnConfig& cfg, const MatR& features, double& pilots,
                             double& locations) {
  const int pd = cfg.pilot_feature_dim();
  pilots = rms_or_one(features.leftCols(pd).squaredNorm(), features.rows() * pd);
  locations = cfg.use_locations
                  ? rms_or_one(features.rightCols(3).squaredNorm(), features.rows() * 3)
                  : 1.0;
}

// Output scalings for the estimator, fitted to the channel magnitudes of a
// calibration batch.
inline void fit_output_scales(const std::vector<ChannelSet>& channels, EstParams& p) {
  double sum_direct = 0.0, sum_cascade = 0.0;
  Eigen::Index n_direct = 0, n_cascade = 0;
  for (const ChannelSet& cs : channels)
    for (std::size_t k = 0; k < cs.user_bs.size(); ++k) {
      sum_direct += cs.user_bs[k].squaredNorm();
      n_direct += cs.user_bs[k].size();
      sum_cascade += cs.cascade[k].squaredNorm();
      n_cascade += cs.cascade[k].size();
    }
  p.out_scale_direct = rms_or_one(sum_direct, n_direct);
  p.out_scale_cascade = rms_or_one(sum_cascade, n_cascade);
}

}  // namespace irsnet
