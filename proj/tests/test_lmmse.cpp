#include <gtest/gtest.h>

#include <filesystem>

#include "irsnet/lmmse.hpp"

namespace irsnet {
namespace {

SystemConfig lmmse_system(int users, int rows, int cols) {
  SystemConfig sys;
  sys.bs_antennas = 4;
  sys.irs_rows = rows;
  sys.irs_cols = cols;
  sys.users = users;
  return sys;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

TEST(Lmmse, ConstantSourceHasZeroCovariance) {
  SystemConfig sys = lmmse_system(2, 2, 3);
  PilotPlan plan = make_pilot_plan(sys, 7, 5);
  sys.fixed_users = {{30, 20, -20}, {12, -8, -20}};
  Rng rng(3);
  auto users = sample_user_locations(sys, rng);
  ChannelSet cs = sample_channels(sys, users, rng);
  // unit-scale channels so absolute tolerances bite
  for (auto& h : cs.user_bs) h /= h.norm();
  Rng quiet(1);
  MatC raw = simulate_uplink(cs, plan, 0.0, quiet);
  ReceivedPilots rx = decorrelate(raw, plan, 0.0);
  std::vector<MatC> chan{cs.combined(0), cs.combined(1)};

  auto draw = [&](int) { return std::make_pair(rx.per_user, chan); };
  ChannelStatistics stats = fit_statistics(draw, 64, 2);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR((stats.mean_obs[k] - rx.per_user[k]).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    EXPECT_NEAR(stats.cov_obs[k].cwiseAbs().maxCoeff(), 0.0, 1e-12);
    // estimating at the mean returns the mean channel
    MatC est = lmmse_estimate(stats, k, rx.per_user[k]);
    EXPECT_NEAR((est - chan[k]).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  }
}

TEST(Lmmse, EstimateIsAffineInObservation) {
  SystemConfig sys = lmmse_system(2, 2, 3);
  PilotPlan plan = make_pilot_plan(sys, 4, 9);
  ChannelStatistics stats = fit_statistics_mc(sys, plan, 400, 11);

  Rng rng(5);
  MatC base = stats.mean_obs[0];
  MatC d1 = detail::cnormal_matrix(base.rows(), base.cols(), rng) * 1e-6;
  MatC d2 = detail::cnormal_matrix(base.rows(), base.cols(), rng) * 1e-6;
  MatC at_mean = lmmse_estimate(stats, 0, base);
  MatC r1 = lmmse_estimate(stats, 0, base + d1) - at_mean;
  MatC r2 = lmmse_estimate(stats, 0, base + d2) - at_mean;
  MatC r12 = lmmse_estimate(stats, 0, base + d1 + d2) - at_mean;
  double scale = std::max(r12.cwiseAbs().maxCoeff(), 1e-30);
  EXPECT_NEAR(((r1 + r2) - r12).cwiseAbs().maxCoeff() / scale, 0.0, 1e-9);
  EXPECT_NEAR((at_mean - stats.mean_chan[0]).cwiseAbs().maxCoeff(), 0.0, 1e-18);
}

TEST(Lmmse, NoiselessSquareProfileRecoversExactly) {
  SystemConfig sys = lmmse_system(2, 2, 3);
  sys.uplink_noise_dbm = -10000.0;  // effectively zero
  const int n = sys.irs_elements();
  PilotPlan plan = make_pilot_plan(sys, n + 1, 13);

  ChannelStatistics stats = fit_statistics_mc(sys, plan, 500, 29);
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Rng sample_rng = Rng::substream(1000, trial);
    auto users = sample_user_locations(sys, sample_rng);
    ChannelSet cs = sample_channels(sys, users, sample_rng);
    MatC raw = simulate_uplink(cs, plan, 0.0, rng);
    ReceivedPilots rx = decorrelate(raw, plan, 0.0);
    for (int k = 0; k < 2; ++k) {
      MatC truth = cs.combined(k);
      MatC ls = ls_estimate(rx.per_user[k], plan.training_profile);
      EXPECT_LT((ls - truth).norm() / truth.norm(), 1e-10);
      MatC lm = lmmse_estimate(stats, k, rx.per_user[k]);
      EXPECT_LT((lm - truth).norm() / truth.norm(), 1e-6);
    }
  }
}

TEST(Lmmse, BeatsLeastSquaresUnderNoise) {
  SystemConfig sys = lmmse_system(2, 4, 4);
  const int n = sys.irs_elements();
  PilotPlan plan = make_pilot_plan(sys, n + 1, 21);
  ChannelStatistics stats = fit_statistics_mc(sys, plan, 3000, 31);

  const double noise = sys.uplink_noise_mw();
  std::vector<double> err_ls, err_lm;
  for (int trial = 0; trial < 300; ++trial) {
    Rng rng = Rng::substream(52, trial);
    auto users = sample_user_locations(sys, rng);
    ChannelSet cs = sample_channels(sys, users, rng);
    ReceivedPilots rx = decorrelate(simulate_uplink(cs, plan, noise, rng), plan, noise);
    for (int k = 0; k < 2; ++k) {
      MatC truth = cs.combined(k);
      err_ls.push_back((ls_estimate(rx.per_user[k], plan.training_profile) - truth).norm() /
                       truth.norm());
      err_lm.push_back((lmmse_estimate(stats, k, rx.per_user[k]) - truth).norm() / truth.norm());
    }
  }
  // the prior-aware estimator should not lose to plain inversion
  EXPECT_LT(median(err_lm), 1.05 * median(err_ls));
  EXPECT_GT(median(err_ls), 0.05);  // noise level is material in this regime
}

TEST(Lmmse, ErrorShrinksWithMoreSubframes) {
  SystemConfig sys = lmmse_system(2, 2, 5);
  const int n = sys.irs_elements();
  std::vector<double> med;
  for (int tau : {3, 6, n + 1}) {
    PilotPlan plan = make_pilot_plan(sys, tau, 43);
    ChannelStatistics stats = fit_statistics_mc(sys, plan, 3000, 61);
    const double noise = sys.uplink_noise_mw();
    std::vector<double> err;
    for (int trial = 0; trial < 400; ++trial) {
      Rng rng = Rng::substream(71, trial);
      auto users = sample_user_locations(sys, rng);
      ChannelSet cs = sample_channels(sys, users, rng);
      ReceivedPilots rx = decorrelate(simulate_uplink(cs, plan, noise, rng), plan, noise);
      for (int k = 0; k < 2; ++k) {
        MatC truth = cs.combined(k);
        err.push_back((lmmse_estimate(stats, k, rx.per_user[k]) - truth).norm() / truth.norm());
      }
    }
    med.push_back(median(err));
  }
  EXPECT_LT(med[1], med[0] * 1.02);
  EXPECT_LT(med[2], med[1] * 1.02);
}

TEST(Lmmse, MomentConvergenceRate) {
  SystemConfig sys = lmmse_system(1, 2, 3);
  PilotPlan plan = make_pilot_plan(sys, 4, 83);
  ChannelStatistics reference = fit_statistics_mc(sys, plan, 32000, 97);
  ChannelStatistics coarse = fit_statistics_mc(sys, plan, 2000, 98);
  ChannelStatistics fine = fit_statistics_mc(sys, plan, 8000, 99);
  double err_coarse = (coarse.cov_obs[0] - reference.cov_obs[0]).norm();
  double err_fine = (fine.cov_obs[0] - reference.cov_obs[0]).norm();
  // quadrupling the sample count roughly halves the moment error
  EXPECT_LT(err_fine, 0.85 * err_coarse);
}

TEST(Lmmse, CacheRoundTrip) {
  SystemConfig sys = lmmse_system(2, 2, 3);
  PilotPlan plan = make_pilot_plan(sys, 4, 7);
  ChannelStatistics stats = fit_statistics_mc(sys, plan, 200, 5);
  auto path = std::filesystem::temp_directory_path() / "irsnet_stats_test.bin";
  save_statistics(path.string(), stats);
  ChannelStatistics loaded = load_statistics(path.string());
  EXPECT_EQ(loaded.config_hash, sys.hash());
  EXPECT_EQ(loaded.plan_hash, plan.hash());
  EXPECT_EQ(loaded.n_samples, 200);
  ASSERT_EQ(loaded.mean_obs.size(), 2u);
  for (int k = 0; k < 2; ++k) {
    EXPECT_TRUE(loaded.cov_obs[k] == stats.cov_obs[k]);
    EXPECT_TRUE(loaded.cross[k] == stats.cross[k]);
  }
  std::filesystem::remove(path);
}

TEST(Lmmse, Validation) {
  SystemConfig sys = lmmse_system(2, 2, 3);
  PilotPlan plan = make_pilot_plan(sys, 3, 7);  // tau < N+1
  ChannelStatistics stats = fit_statistics_mc(sys, plan, 50, 5);
  MatC obs = MatC::Zero(4, 3);
  EXPECT_THROW(ls_estimate(obs, plan.training_profile), ConfigError);
  EXPECT_THROW(lmmse_estimate(stats, 5, obs), ConfigError);
  EXPECT_THROW(lmmse_estimate(stats, 0, MatC::Zero(4, 2)), ConfigError);
  auto draw = [&](int) {
    return std::make_pair(std::vector<MatC>{obs}, std::vector<MatC>{obs});
  };
  EXPECT_THROW(fit_statistics(draw, 1, 1), ConfigError);
  EXPECT_THROW(fit_statistics(draw, 10, 2), ConfigError);
}

}  // namespace
}  // namespace irsnet
