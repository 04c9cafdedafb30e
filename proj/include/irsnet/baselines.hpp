#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "irsnet/rates.hpp"

namespace irsnet {

// Downlink effective channels as columns: g_k = h_d,k + A_k v.
inline MatC effective_matrix(const ChannelSet& cs, const VecC& phases) {
  const int users = static_cast<int>(cs.user_bs.size());
  MatC g(cs.bs_irs.rows(), users);
  for (int k = 0; k < users; ++k)
    g.col(k) = effective_channel(cs.user_bs[k], cs.cascade[k], phases);
  return g;
}

inline double sum_rate_from_products(const MatC& s, double noise_mw) {
  const int users = static_cast<int>(s.rows());
  double total = 0.0;
  for (int k = 0; k < users; ++k) {
    double interference = 0.0;
    for (int i = 0; i < users; ++i)
      if (i != k) interference += std::norm(s(k, i));
    total += std::log2(1.0 + std::norm(s(k, k)) / (interference + noise_mw));
  }
  return total;
}

inline double sum_rate_for(const MatC& geff, const MatC& beams, double noise_mw) {
  return sum_rate_from_products(geff.transpose() * beams, noise_mw);
}

// Matched-filter columns sharing the budget equally; the standard warm start.
inline MatC matched_filter_beams(const MatC& geff, double power_mw) {
  const int users = static_cast<int>(geff.cols());
  MatC w = MatC::Zero(geff.rows(), users);
  const double per_user = std::sqrt(power_mw / users);
  for (int k = 0; k < users; ++k) {
    const double nrm = geff.col(k).norm();
    if (nrm > 0.0) w.col(k) = per_user * geff.col(k).conjugate() / nrm;
  }
  return w;
}

struct WmmseOptions {
  int max_iters = 500;
  double tol = 1e-9;  // stop when the sum-rate gain per iteration drops below
};

namespace detail {

// Minimum-norm-style beam solve: columns of (A + mu I)^{-1} B with mu >= 0
// picked by bisection so the total power meets the budget.
inline MatC solve_power_constrained(const MatC& a, const MatC& rhs, double power_mw) {
  Eigen::SelfAdjointEigenSolver<MatC> es(a);
  const VecR lam = es.eigenvalues().cwiseMax(0.0);
  const MatC basis = es.eigenvectors();
  const MatC proj = basis.adjoint() * rhs;  // modes x users
  const MatR weight = proj.cwiseAbs2();

  auto power_at = [&](double mu) {
    double total = 0.0;
    for (Eigen::Index m = 0; m < weight.rows(); ++m) {
      const double d = lam(m) + mu;
      total += weight.row(m).sum() / (d * d);
    }
    return total;
  };

  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  double mu = 0.0;
  const bool invertible = lam.size() && lam.minCoeff() > 1e-14 * std::max(lam_max, 1.0);
  if (!(invertible && power_at(0.0) <= power_mw)) {
    double hi = std::sqrt(std::max(weight.sum() / power_mw, 1e-300));
    double lo = 0.0;
    for (int it = 0; it < 256; ++it) {
      mu = 0.5 * (lo + hi);
      const double p = power_at(mu);
      if (std::abs(p - power_mw) <= 1e-13 * power_mw) break;
      (p > power_mw ? lo : hi) = mu;
    }
    mu = 0.5 * (lo + hi);
  }

  MatC scaled = proj;
  for (Eigen::Index m = 0; m < scaled.rows(); ++m) scaled.row(m) /= lam(m) + mu;
  return basis * scaled;
}

}  // namespace detail

// Weighted-MMSE sum-rate beamforming for fixed effective channels. The
// downlink convention is transposed, so the receive filters pair with
// conj(g). Monotone in the sum rate from whatever beams it starts at.
inline MatC wmmse_beamforming(const MatC& geff, double power_mw, double noise_mw,
                              const MatC* warm = nullptr, const WmmseOptions& opt = {}) {
  const int m = static_cast<int>(geff.rows());
  const int users = static_cast<int>(geff.cols());
  if (users == 1) {
    MatC w = MatC::Zero(m, 1);
    const double nrm = geff.col(0).norm();
    if (nrm > 0.0) w.col(0) = std::sqrt(power_mw) * geff.col(0).conjugate() / nrm;
    return w;
  }

  MatC w = warm && warm->rows() == m && warm->cols() == users ? *warm
                                                              : matched_filter_beams(geff, power_mw);
  MatC best = w;
  double prev = sum_rate_for(geff, w, noise_mw);
  double best_rate = prev;

  for (int it = 0; it < opt.max_iters; ++it) {
    const MatC s = geff.transpose() * w;
    VecC u(users);
    VecR rho(users);
    for (int k = 0; k < users; ++k) {
      double received = noise_mw;
      for (int i = 0; i < users; ++i) received += std::norm(s(k, i));
      u(k) = s(k, k) / received;
      const double mse = 1.0 - std::norm(s(k, k)) / received;
      rho(k) = 1.0 / mse;
    }

    MatC a = MatC::Zero(m, m);
    MatC rhs(m, users);
    for (int k = 0; k < users; ++k) {
      const VecC ck = geff.col(k).conjugate();
      a.noalias() += rho(k) * std::norm(u(k)) * ck * ck.adjoint();
      rhs.col(k) = rho(k) * u(k) * ck;
    }
    w = detail::solve_power_constrained(a, rhs, power_mw);

    const double now = sum_rate_for(geff, w, noise_mw);
    if (now > best_rate) {
      best_rate = now;
      best = w;
    }
    if (now - prev < opt.tol) break;
    prev = now;
  }
  return best;
}

// ---- per-element reflection updates

// Sum rate as a function of one element's coefficient: the signal products
// are affine, s(k, i) = base(k, i) + value * slope(k, i).
inline double element_sum_rate(const MatC& base, const MatC& slope, cd value, double noise_mw) {
  const int users = static_cast<int>(base.rows());
  double total = 0.0;
  for (int k = 0; k < users; ++k) {
    double interference = 0.0;
    double signal = 0.0;
    for (int i = 0; i < users; ++i) {
      const double p = std::norm(base(k, i) + value * slope(k, i));
      if (i == k)
        signal = p;
      else
        interference += p;
    }
    total += std::log2(1.0 + signal / (interference + noise_mw));
  }
  return total;
}

// Best unit-modulus coefficient for one element: coarse grid then a golden
// section polish around the winner. Never returns a value worse than the
// current one.
inline cd best_element_phase(const MatC& base, const MatC& slope, cd current, double noise_mw,
                             int grid = 128, int refine_iters = 40) {
  double best_val = element_sum_rate(base, slope, current, noise_mw);
  double best_angle = std::arg(current);
  bool moved = false;
  for (int g = 0; g < grid; ++g) {
    const double angle = -kPi + 2.0 * kPi * g / grid;
    const double val = element_sum_rate(base, slope, std::polar(1.0, angle), noise_mw);
    if (val > best_val) {
      best_val = val;
      best_angle = angle;
      moved = true;
    }
  }

  const double span = 2.0 * kPi / grid;
  double lo = best_angle - span, hi = best_angle + span;
  const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
  double f1 = element_sum_rate(base, slope, std::polar(1.0, x1), noise_mw);
  double f2 = element_sum_rate(base, slope, std::polar(1.0, x2), noise_mw);
  for (int it = 0; it < refine_iters; ++it) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = element_sum_rate(base, slope, std::polar(1.0, x2), noise_mw);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = element_sum_rate(base, slope, std::polar(1.0, x1), noise_mw);
    }
  }
  const double refined = 0.5 * (lo + hi);
  const double refined_val = element_sum_rate(base, slope, std::polar(1.0, refined), noise_mw);
  if (refined_val > best_val) {
    best_val = refined_val;
    best_angle = refined;
    moved = true;
  }
  return moved ? std::polar(1.0, best_angle) : current;
}

struct BcdOptions {
  double tol = 1e-3;   // outer loop stops below this sum-rate gain
  int max_outer = 100;
  int grid = 128;
  int refine_iters = 40;
  WmmseOptions wmmse;
};

struct BcdResult {
  Solution solution;
  std::vector<double> trace;  // sum rate after every block update
  bool converged = false;
  int outer_iters = 0;
};

// Alternates sum-rate beamforming with exhaustive per-element reflection
// updates. Every block is accept-if-improved, so the trace never decreases.
inline BcdResult bcd_optimize(const ChannelSet& cs, double power_mw, double noise_mw,
                              const BcdOptions& opt = {}, const VecC* init_phases = nullptr) {
  const int users = static_cast<int>(cs.user_bs.size());
  const int n = static_cast<int>(cs.bs_irs.cols());
  BcdResult res;
  VecC v = init_phases ? *init_phases : VecC::Ones(n);
  MatC w;
  double prev_cycle = 0.0;

  for (int outer = 0; outer < opt.max_outer; ++outer) {
    const MatC geff = effective_matrix(cs, v);
    w = wmmse_beamforming(geff, power_mw, noise_mw, outer > 0 ? &w : nullptr, opt.wmmse);
    res.trace.push_back(sum_rate_for(geff, w, noise_mw));

    // Affine decomposition of the signal products in each element.
    MatC s = geff.transpose() * w;
    std::vector<MatC> slope_at(n, MatC(users, users));
    for (int k = 0; k < users; ++k) {
      const MatC t = cs.cascade[k].transpose() * w;  // N x K
      for (int el = 0; el < n; ++el)
        for (int i = 0; i < users; ++i) slope_at[el](k, i) = t(el, i);
    }

    for (int el = 0; el < n; ++el) {
      const MatC base = s - v(el) * slope_at[el];
      const cd updated = best_element_phase(base, slope_at[el], v(el), noise_mw, opt.grid,
                                            opt.refine_iters);
      if (updated != v(el)) {
        s += (updated - v(el)) * slope_at[el];
        v(el) = updated;
      }
    }
    const double after_phases = sum_rate_from_products(s, noise_mw);
    res.trace.push_back(after_phases);

    res.outer_iters = outer + 1;
    if (outer > 0 && after_phases - prev_cycle < opt.tol) {
      res.converged = true;
      break;
    }
    prev_cycle = after_phases;
  }

  res.solution.beams = w;
  res.solution.phases = v;
  return res;
}

// Reference point: uniformly random reflections, beams still optimized.
inline Solution random_phase_baseline(const ChannelSet& cs, double power_mw, double noise_mw,
                                      Rng& rng, const WmmseOptions& opt = {}) {
  const int n = static_cast<int>(cs.bs_irs.cols());
  Solution sol;
  sol.phases.resize(n);
  for (int i = 0; i < n; ++i) sol.phases(i) = std::polar(1.0, rng.uniform(-kPi, kPi));
  const MatC geff = effective_matrix(cs, sol.phases);
  sol.beams = wmmse_beamforming(geff, power_mw, noise_mw, nullptr, opt);
  return sol;
}

// ---- fairness objective

// Smooth lower envelope of the rates; approaches the minimum from below as
// the temperature falls, and for fixed rates it rises as T falls.
inline double softmin_value(const VecR& rates, double temperature) {
  const double lo = rates.minCoeff();
  double total = 0.0;
  for (Eigen::Index k = 0; k < rates.size(); ++k)
    total += std::exp(-(rates(k) - lo) / temperature);
  return lo - temperature * std::log(total);
}

inline VecR softmin_weights(const VecR& rates, double temperature) {
  const double lo = rates.minCoeff();
  VecR w(rates.size());
  for (Eigen::Index k = 0; k < rates.size(); ++k)
    w(k) = std::exp(-(rates(k) - lo) / temperature);
  return w / w.sum();
}

inline VecR rates_for(const MatC& geff, const MatC& beams, double noise_mw) {
  const MatC s = geff.transpose() * beams;
  const int users = static_cast<int>(s.rows());
  VecR r(users);
  for (int k = 0; k < users; ++k) {
    double interference = 0.0;
    for (int i = 0; i < users; ++i)
      if (i != k) interference += std::norm(s(k, i));
    r(k) = std::log2(1.0 + std::norm(s(k, k)) / (interference + noise_mw));
  }
  return r;
}

// Ascent direction of sum_k weight_k * rate_k in packed complex form
// (d/dRe + j d/dIm), shared by the fairness optimizer's two blocks.
inline void weighted_rate_gradient(const ChannelSet& cs, const VecC& v, const MatC& w,
                                   const VecR& weights, double noise_mw, MatC& dw, VecC& dv) {
  const int users = static_cast<int>(cs.user_bs.size());
  const MatC geff = effective_matrix(cs, v);
  const MatC s = geff.transpose() * w;
  const double inv_ln2 = 1.0 / std::log(2.0);

  MatR coeff(users, users);
  for (int k = 0; k < users; ++k) {
    double denom = noise_mw;
    for (int i = 0; i < users; ++i)
      if (i != k) denom += std::norm(s(k, i));
    const double total = denom + std::norm(s(k, k));
    for (int i = 0; i < users; ++i)
      coeff(k, i) = i == k ? weights(k) * inv_ln2 / total
                           : weights(k) * inv_ln2 * (1.0 / total - 1.0 / denom);
  }

  const MatC weighted = coeff.cast<cd>().cwiseProduct(s);
  dw = 2.0 * geff.conjugate() * weighted;
  dv = VecC::Zero(v.size());
  for (int k = 0; k < users; ++k) {
    const VecC ek = w * weighted.row(k).adjoint();
    dv += 2.0 * (cs.cascade[k].transpose() * ek).conjugate();
  }
}

// Optimal powers for fixed beam directions under a balanced-rate objective:
// bisection on the common target t, solving p = t (F p + b) at each probe.
inline VecR balanced_power_allocation(const MatR& gains, double power_mw, double noise_mw) {
  const int users = static_cast<int>(gains.rows());
  if (users == 1) return VecR::Constant(1, power_mw);

  for (int k = 0; k < users; ++k)
    if (!(gains(k, k) > 0.0)) return VecR::Constant(users, power_mw / users);

  MatR f = MatR::Zero(users, users);
  VecR b(users);
  for (int k = 0; k < users; ++k) {
    b(k) = noise_mw / gains(k, k);
    for (int i = 0; i < users; ++i)
      if (i != k) f(k, i) = gains(k, i) / gains(k, k);
  }

  auto solve_at = [&](double t, VecR& p) {
    const MatR lhs = MatR::Identity(users, users) - t * f;
    Eigen::PartialPivLU<MatR> lu(lhs);
    p = lu.solve(t * b);
    if (!p.allFinite() || p.minCoeff() < 0.0) return false;
    const VecR residual = lhs * p - t * b;
    return residual.cwiseAbs().maxCoeff() < 1e-6 * (1.0 + p.cwiseAbs().maxCoeff());
  };

  VecR p(users);
  double lo = 0.0, hi = 1.0;
  for (int grow = 0; grow < 80; ++grow) {
    if (!solve_at(hi, p) || p.sum() >= power_mw) break;
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (solve_at(mid, p) && p.sum() <= power_mw)
      lo = mid;
    else
      hi = mid;
  }
  if (!solve_at(lo, p)) return VecR::Constant(users, power_mw / users);
  // spend exactly the budget; scaling only raises every balanced rate
  if (p.sum() > 0.0) p *= power_mw / p.sum();
  return p;
}

// Rebalance beam powers along fixed directions to the balanced optimum.
inline MatC rebalance_beams(const MatC& geff, const MatC& w, double power_mw, double noise_mw) {
  const int users = static_cast<int>(w.cols());
  MatC directions(w.rows(), users);
  for (int k = 0; k < users; ++k) {
    const double nrm = w.col(k).norm();
    directions.col(k) = nrm > 0.0 ? (w.col(k) / nrm).eval() : VecC::Zero(w.rows()).eval();
  }
  MatR gains(users, users);
  for (int k = 0; k < users; ++k)
    for (int i = 0; i < users; ++i) {
      const cd product = geff.col(k).transpose() * directions.col(i);
      gains(k, i) = std::norm(product);
    }
  const VecR p = balanced_power_allocation(gains, power_mw, noise_mw);
  MatC out(w.rows(), users);
  for (int k = 0; k < users; ++k) out.col(k) = std::sqrt(p(k)) * directions.col(k);
  return out;
}

struct MaxMinOptions {
  double temp_start = 1.0;
  double temp_decay = 0.6;
  double temp_floor = 0.01;
  int steps_per_temp = 25;
  double step_beams = 0.5;
  double step_phases = 0.5;
  int backtracks = 25;
  WmmseOptions wmmse;
};

struct MaxMinResult {
  Solution solution;
  std::vector<double> trace;  // surrogate at the then-current temperature
  double min_rate = 0.0;
  int steps = 0;
};

// Fairness optimizer: annealed smooth-minimum surrogate, alternating
// projected gradient blocks plus exact power rebalances. Every move is
// accept-if-improved at the current temperature, and lowering the
// temperature only raises the surrogate, so the trace never decreases.
inline MaxMinResult maxmin_optimize(const ChannelSet& cs, double power_mw, double noise_mw,
                                    const MaxMinOptions& opt = {}) {
  const int users = static_cast<int>(cs.user_bs.size());
  const int n = static_cast<int>(cs.bs_irs.cols());
  MaxMinResult res;

  VecC v = VecC::Ones(n);
  MatC geff = effective_matrix(cs, v);
  MatC w = wmmse_beamforming(geff, power_mw, noise_mw, nullptr, opt.wmmse);
  w = rebalance_beams(geff, w, power_mw, noise_mw);

  auto surrogate = [&](const VecC& vv, const MatC& ww, double temp) {
    return softmin_value(rates_for(effective_matrix(cs, vv), ww, noise_mw), temp);
  };
  auto project_phases = [&](VecC vv) {
    for (int i = 0; i < n; ++i) {
      const double nrm = std::abs(vv(i));
      vv(i) = nrm > 0.0 ? vv(i) / nrm : cd(1.0, 0.0);
    }
    return vv;
  };
  auto project_beams = [&](MatC ww) {
    const double nrm = ww.norm();
    if (nrm > 0.0) ww *= std::sqrt(power_mw) / nrm;
    return ww;
  };

  double step_v = opt.step_phases;
  double step_w = opt.step_beams;
  for (double temp = opt.temp_start; temp >= opt.temp_floor * (1.0 - 1e-12);
       temp *= opt.temp_decay) {
    for (int step = 0; step < opt.steps_per_temp; ++step) {
      double current = surrogate(v, w, temp);
      const VecR weights = softmin_weights(rates_for(effective_matrix(cs, v), w, noise_mw), temp);
      MatC dw;
      VecC dv;
      weighted_rate_gradient(cs, v, w, weights, noise_mw, dw, dv);

      // reflection block
      {
        const double scale = dv.norm();
        if (scale > 0.0) {
          double eta = step_v;
          bool accepted = false;
          for (int bt = 0; bt < opt.backtracks && !accepted; ++bt, eta *= 0.5) {
            const VecC cand = project_phases(v + eta * std::sqrt(static_cast<double>(n)) / scale * dv);
            if (surrogate(cand, w, temp) > current) {
              v = cand;
              current = surrogate(v, w, temp);
              step_v = bt == 0 ? std::min(step_v * 1.5, 4.0) : eta;
              accepted = true;
            }
          }
        }
      }

      // beam block
      {
        const double scale = dw.norm();
        if (scale > 0.0) {
          double eta = step_w;
          bool accepted = false;
          for (int bt = 0; bt < opt.backtracks && !accepted; ++bt, eta *= 0.5) {
            const MatC cand = project_beams(w + eta * std::sqrt(power_mw) / scale * dw);
            if (surrogate(v, cand, temp) > current) {
              w = cand;
              current = surrogate(v, w, temp);
              step_w = bt == 0 ? std::min(step_w * 1.5, 4.0) : eta;
              accepted = true;
            }
          }
        }
      }

      // exact power rebalance, kept only if the surrogate agrees
      {
        const MatC g_now = effective_matrix(cs, v);
        const MatC cand = rebalance_beams(g_now, w, power_mw, noise_mw);
        if (softmin_value(rates_for(g_now, cand, noise_mw), temp) >= current) w = cand;
      }

      res.trace.push_back(surrogate(v, w, temp));
      ++res.steps;
    }
  }

  // Final rebalance on the true objective: for fixed directions the balanced
  // allocation is min-rate optimal, so this never hurts.
  geff = effective_matrix(cs, v);
  const MatC balanced = rebalance_beams(geff, w, power_mw, noise_mw);
  if (rates_for(geff, balanced, noise_mw).minCoeff() >= rates_for(geff, w, noise_mw).minCoeff())
    w = balanced;

  res.solution.beams = w;
  res.solution.phases = v;
  res.min_rate = rates_for(geff, w, noise_mw).minCoeff();
  return res;
}

}  // namespace irsnet
