#pragma once

#include <vector>

#include "irsnet/config.hpp"
#include "irsnet/rng.hpp"
#include "irsnet/steering.hpp"

namespace irsnet {

// One uplink channel realization. Downlink channels follow by reciprocity
// as transposes, so downlink signal terms use g^T w rather than g^H w.
struct ChannelSet {
  MatC bs_irs;                 // M x N
  std::vector<VecC> user_bs;   // per user, M
  std::vector<VecC> user_irs;  // per user, N
  std::vector<MatC> cascade;   // per user, M x N: bs_irs * diag(user_irs)

  // [user_bs | cascade]: the matrix the pilot protocol observes.
  MatC combined(int k) const {
    MatC f(user_bs[k].size(), cascade[k].cols() + 1);
    f.col(0) = user_bs[k];
    f.rightCols(cascade[k].cols()) = cascade[k];
    return f;
  }
};

inline std::vector<Vec3> sample_user_locations(const SystemConfig& sys, Rng& rng) {
  if (!sys.fixed_users.empty()) {
    if (static_cast<int>(sys.fixed_users.size()) != sys.users)
      throw ConfigError("fixed_users must list exactly one location per user");
    return sys.fixed_users;
  }
  std::vector<Vec3> out(sys.users);
  for (auto& u : out) {
    u.x = rng.uniform(sys.user_region.lo.x, sys.user_region.hi.x);
    u.y = rng.uniform(sys.user_region.lo.y, sys.user_region.hi.y);
    u.z = rng.uniform(sys.user_region.lo.z, sys.user_region.hi.z);
  }
  return out;
}

namespace detail {

// Mixing weights for the line-of-sight and scattered parts. An infinite
// factor degenerates to (1, 0) rather than NaN.
inline std::pair<double, double> rician_weights(double factor) {
  if (std::isinf(factor)) return {1.0, 0.0};
  return {std::sqrt(factor / (1.0 + factor)), std::sqrt(1.0 / (1.0 + factor))};
}

inline MatC cnormal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatC m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.cnormal();
  return m;
}

inline VecC cnormal_vector(Eigen::Index n, Rng& rng) {
  VecC v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.cnormal();
  return v;
}

}  // namespace detail

// Draw order is fixed (BS-IRS matrix first, then per user the direct and the
// reflected link), so a given rng state yields a reproducible realization.
inline ChannelSet sample_channels(const SystemConfig& sys, const std::vector<Vec3>& users, Rng& rng) {
  const int m = sys.bs_antennas;
  const int n = sys.irs_elements();
  if (static_cast<int>(users.size()) != sys.users)
    throw ConfigError("sample_channels needs one location per user");

  auto [w_los, w_nlos] = detail::rician_weights(sys.rician_factor);

  ChannelSet cs;
  const double d_bi = distance(sys.bs_location, sys.irs_location);
  const Angles arrive_bs = angles_between(sys.bs_location, sys.irs_location);
  const Angles depart_irs = angles_between(sys.irs_location, sys.bs_location);
  const double gain_bi = amplitude_gain(pathloss_reflected_db(d_bi));

  MatC los = steering_ula(m, arrive_bs.azimuth, arrive_bs.elevation) *
             steering_ura(sys.irs_rows, sys.irs_cols, depart_irs.azimuth, depart_irs.elevation).adjoint();
  cs.bs_irs = gain_bi * (w_los * los + w_nlos * detail::cnormal_matrix(m, n, rng));

  cs.user_bs.resize(users.size());
  cs.user_irs.resize(users.size());
  cs.cascade.resize(users.size());
  for (std::size_t k = 0; k < users.size(); ++k) {
    const double gain_direct = amplitude_gain(pathloss_direct_db(distance(sys.bs_location, users[k])));
    cs.user_bs[k] = gain_direct * detail::cnormal_vector(m, rng);

    const Angles arrive_irs = angles_between(sys.irs_location, users[k]);
    const double gain_ru = amplitude_gain(pathloss_reflected_db(distance(sys.irs_location, users[k])));
    cs.user_irs[k] = gain_ru * (w_los * steering_ura(sys.irs_rows, sys.irs_cols, arrive_irs.azimuth,
                                                     arrive_irs.elevation) +
                                w_nlos * detail::cnormal_vector(n, rng));
    cs.cascade[k] = cs.bs_irs * cs.user_irs[k].asDiagonal();
  }
  return cs;
}

}  // namespace irsnet
