#pragma once

#include <utility>

#include "irsnet/pilots.hpp"

namespace irsnet {

// Per-user first and second moments of (decorrelated observation, combined
// channel) pairs, fitted empirically. Second moments are column-space
// covariances: cov_obs = E[(Y-mean)^H (Y-mean)], cross = E[(Y-mean)^H (F-mean)].
struct ChannelStatistics {
  int n_samples = 0;
  uint64_t config_hash = 0;
  uint64_t plan_hash = 0;
  std::vector<MatC> mean_obs;   // per user, M x tau
  std::vector<MatC> mean_chan;  // per user, M x (N+1)
  std::vector<MatC> cov_obs;    // per user, tau x tau
  std::vector<MatC> cross;      // per user, tau x (N+1)
};

// draw(i) must return observation/channel matrices for every user of sample i.
template <class SampleFn>
ChannelStatistics fit_statistics(SampleFn&& draw, int n_samples, int users) {
  if (n_samples < 2) throw ConfigError("fitting statistics needs at least two samples");
  if (users < 1) throw ConfigError("fitting statistics needs at least one user");

  ChannelStatistics stats;
  stats.n_samples = n_samples;
  std::vector<MatC> sum_y, sum_f, sum_yy, sum_yf;
  for (int i = 0; i < n_samples; ++i) {
    auto [obs, chan] = draw(i);
    if (static_cast<int>(obs.size()) != users || static_cast<int>(chan.size()) != users)
      throw ConfigError("statistics sample does not cover every user");
    if (i == 0) {
      for (int k = 0; k < users; ++k) {
        sum_y.push_back(MatC::Zero(obs[k].rows(), obs[k].cols()));
        sum_f.push_back(MatC::Zero(chan[k].rows(), chan[k].cols()));
        sum_yy.push_back(MatC::Zero(obs[k].cols(), obs[k].cols()));
        sum_yf.push_back(MatC::Zero(obs[k].cols(), chan[k].cols()));
      }
    }
    for (int k = 0; k < users; ++k) {
      sum_y[k] += obs[k];
      sum_f[k] += chan[k];
      sum_yy[k].noalias() += obs[k].adjoint() * obs[k];
      sum_yf[k].noalias() += obs[k].adjoint() * chan[k];
    }
  }
  const double inv_n = 1.0 / n_samples;
  for (int k = 0; k < users; ++k) {
    stats.mean_obs.push_back(sum_y[k] * inv_n);
    stats.mean_chan.push_back(sum_f[k] * inv_n);
    stats.cov_obs.push_back(sum_yy[k] * inv_n -
                            stats.mean_obs[k].adjoint() * stats.mean_obs[k]);
    stats.cross.push_back(sum_yf[k] * inv_n - stats.mean_obs[k].adjoint() * stats.mean_chan[k]);
  }
  return stats;
}

// Monte-Carlo fit over fresh placements, channels, and pilot noise. Each
// sample uses its own derived stream, so the fit is reproducible and
// independent of iteration order.
inline ChannelStatistics fit_statistics_mc(const SystemConfig& sys, const PilotPlan& plan,
                                           int n_samples, uint64_t seed) {
  sys.validate();
  const double noise = sys.uplink_noise_mw();
  auto draw = [&](int i) {
    Rng rng = Rng::substream(seed, static_cast<uint64_t>(i));
    auto users = sample_user_locations(sys, rng);
    ChannelSet cs = sample_channels(sys, users, rng);
    ReceivedPilots rx = decorrelate(simulate_uplink(cs, plan, noise, rng), plan, noise);
    std::vector<MatC> chan(cs.user_bs.size());
    for (std::size_t k = 0; k < chan.size(); ++k) chan[k] = cs.combined(static_cast<int>(k));
    return std::make_pair(std::move(rx.per_user), std::move(chan));
  };
  ChannelStatistics stats = fit_statistics(draw, n_samples, sys.users);
  stats.config_hash = sys.hash();
  stats.plan_hash = plan.hash();
  return stats;
}

// Linear minimum-MSE estimate of the combined channel from one observation.
// A small ridge proportional to the covariance trace keeps the solve stable
// when the observation covariance is rank deficient.
inline MatC lmmse_estimate(const ChannelStatistics& stats, int user, const MatC& obs) {
  if (user < 0 || user >= static_cast<int>(stats.mean_obs.size()))
    throw ConfigError("lmmse_estimate: user index out of range");
  const MatC& cyy = stats.cov_obs[user];
  const auto tau = cyy.rows();
  if (obs.rows() != stats.mean_obs[user].rows() || obs.cols() != tau)
    throw ConfigError("lmmse_estimate: observation shape mismatch");
  const double ridge = 1e-10 * cyy.trace().real() / static_cast<double>(tau);
  MatC regularized = cyy + ridge * MatC::Identity(tau, tau);
  MatC weights = regularized.ldlt().solve(stats.cross[user]);
  return (obs - stats.mean_obs[user]) * weights + stats.mean_chan[user];
}

// Least-squares recovery; needs at least as many sub-frames as profile rows.
inline MatC ls_estimate(const MatC& obs, const MatC& profile) {
  if (profile.cols() < profile.rows())
    throw ConfigError("ls_estimate needs a full-row-rank profile (tau >= N+1)");
  if (obs.cols() != profile.cols()) throw ConfigError("ls_estimate: observation shape mismatch");
  MatC gram = profile * profile.adjoint();
  MatC rhs = profile * obs.adjoint();
  return gram.ldlt().solve(rhs).adjoint();
}

inline constexpr uint64_t kStatsMagic = 0x3154415453535249ull;  // "IRSSTAT1"

inline void save_statistics(const std::string& path, const ChannelStatistics& stats) {
  BinaryWriter w;
  w.u64(kStatsMagic);
  w.u64(stats.config_hash);
  w.u64(stats.plan_hash);
  w.i64(stats.n_samples);
  w.u64(stats.mean_obs.size());
  for (std::size_t k = 0; k < stats.mean_obs.size(); ++k) {
    w.matc(stats.mean_obs[k]);
    w.matc(stats.mean_chan[k]);
    w.matc(stats.cov_obs[k]);
    w.matc(stats.cross[k]);
  }
  atomic_write_file(path, w.buffer());
}

inline ChannelStatistics load_statistics(const std::string& path) {
  BinaryReader r(read_file_bytes(path));
  if (r.u64() != kStatsMagic) throw ConfigError("not a statistics cache: " + path);
  ChannelStatistics stats;
  stats.config_hash = r.u64();
  stats.plan_hash = r.u64();
  stats.n_samples = static_cast<int>(r.i64());
  auto users = r.u64();
  for (uint64_t k = 0; k < users; ++k) {
    stats.mean_obs.push_back(r.matc());
    stats.mean_chan.push_back(r.matc());
    stats.cov_obs.push_back(r.matc());
    stats.cross.push_back(r.matc());
  }
  if (!r.at_end()) throw ConfigError("statistics cache has trailing bytes");
  return stats;
}

}  // namespace irsnet
