#pragma once

#include <vector>

#include "irsnet/channel.hpp"

namespace irsnet {

// One downlink decision: beamforming columns (M x K) and unit-modulus
// reflection coefficients (N).
struct Solution {
  MatC beams;
  VecC phases;
};

enum class Utility { sum, min };

inline Utility utility_from_string(const std::string& s) {
  if (s == "sum") return Utility::sum;
  if (s == "min") return Utility::min;
  throw ConfigError("unknown utility '" + s + "' (expected sum or min)");
}

inline const char* to_string(Utility u) { return u == Utility::sum ? "sum" : "min"; }

inline VecC effective_channel(const VecC& user_bs, const MatC& cascade, const VecC& phases) {
  return user_bs + cascade * phases;
}

// Achievable rate of user k in bits. Downlink channels are transposed uplink
// channels, so signal terms read g^T w without conjugation.
inline double user_rate(const std::vector<VecC>& effective, const MatC& beams, double noise_mw,
                        int k) {
  const int users = static_cast<int>(effective.size());
  if (beams.cols() != users) throw ConfigError("beam count does not match the user count");
  double signal = 0.0, interference = 0.0;
  for (int i = 0; i < users; ++i) {
    cd s = effective[k].transpose() * beams.col(i);
    if (i == k)
      signal = std::norm(s);
    else
      interference += std::norm(s);
  }
  return std::log2(1.0 + signal / (interference + noise_mw));
}

inline std::vector<double> user_rates(const ChannelSet& cs, const Solution& sol, double noise_mw) {
  std::vector<VecC> effective(cs.user_bs.size());
  for (std::size_t k = 0; k < cs.user_bs.size(); ++k)
    effective[k] = effective_channel(cs.user_bs[k], cs.cascade[k], sol.phases);
  std::vector<double> rates(effective.size());
  for (std::size_t k = 0; k < effective.size(); ++k)
    rates[k] = user_rate(effective, sol.beams, noise_mw, static_cast<int>(k));
  return rates;
}

inline double sum_rate(const std::vector<double>& rates) {
  double s = 0.0;
  for (double r : rates) s += r;
  return s;
}

inline double min_rate(const std::vector<double>& rates) {
  double m = rates.empty() ? 0.0 : rates[0];
  for (double r : rates) m = std::min(m, r);
  return m;
}

inline double utility_value(const std::vector<double>& rates, Utility u) {
  return u == Utility::sum ? sum_rate(rates) : min_rate(rates);
}

// Rate of user k computed entirely in real arithmetic on split re/im parts,
// mirroring how the learned outputs are laid out. This is the path the
// hand-written derivatives follow; the complex user_rate above is its oracle.
inline double user_rate_real(const std::vector<MatR>& cascade_re, const std::vector<MatR>& cascade_im,
                             const std::vector<VecR>& direct_re, const std::vector<VecR>& direct_im,
                             const MatR& beams_re, const MatR& beams_im, const VecR& phases_re,
                             const VecR& phases_im, double noise_mw, int k) {
  VecR g_re = direct_re[k] + cascade_re[k] * phases_re - cascade_im[k] * phases_im;
  VecR g_im = direct_im[k] + cascade_im[k] * phases_re + cascade_re[k] * phases_im;
  const int users = static_cast<int>(beams_re.cols());
  double signal = 0.0, interference = 0.0;
  for (int i = 0; i < users; ++i) {
    double re = beams_re.col(i).dot(g_re) - beams_im.col(i).dot(g_im);
    double im = beams_im.col(i).dot(g_re) + beams_re.col(i).dot(g_im);
    double p = re * re + im * im;
    if (i == k)
      signal = p;
    else
      interference += p;
  }
  return std::log2(1.0 + signal / (interference + noise_mw));
}

// Feasibility diagnostics for learned outputs.
inline double phase_unit_error(const VecC& phases) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < phases.size(); ++i)
    worst = std::max(worst, std::abs(std::abs(phases(i)) - 1.0));
  return worst;
}

inline double power_relative_error(const MatC& beams, double power_mw) {
  return std::abs(beams.squaredNorm() - power_mw) / power_mw;
}

}  // namespace irsnet
