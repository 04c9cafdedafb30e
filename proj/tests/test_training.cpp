#include "irsnet/training.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace irsnet {
namespace {

SystemConfig desk_system() {
  SystemConfig sys;
  sys.bs_antennas = 4;
  sys.irs_rows = 4;
  sys.irs_cols = 4;
  sys.users = 2;
  return sys;
}

GnnConfig tiny_gnn(const SystemConfig& sys, int subframes) {
  GnnConfig cfg = gnn_config_for(sys, subframes);
  cfg.depth = 2;
  cfg.embed_dim = 24;
  cfg.hidden_init = 32;
  cfg.hidden_update = 24;
  return cfg;
}

TrainingConfig tiny_training(uint64_t seed) {
  TrainingConfig tc;
  tc.iterations_per_epoch = 10;
  tc.batch_size = 16;
  tc.max_epochs = 3;
  tc.validation_size = 64;
  tc.calibration_size = 32;
  tc.seed = seed;
  return tc;
}

std::filesystem::path fresh_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(Schedule, FollowsTheSteppedDecay) {
  TrainingConfig tc;
  EXPECT_DOUBLE_EQ(lr_at(tc, 1), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(tc, 300), 1e-3);
  EXPECT_NEAR(lr_at(tc, 301), 9.8e-4, 1e-15);
  EXPECT_NEAR(lr_at(tc, 601), 9.604e-4, 1e-15);
  EXPECT_NEAR(lr_at(tc, 900), 9.604e-4, 1e-15);
  EXPECT_THROW(lr_at(tc, 0), ConfigError);
}

TEST(Sampling, SameIndexReproducesTheSameSample) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const TrainSample a = draw_sample(sys, plan, 11, 42);
  const TrainSample b = draw_sample(sys, plan, 11, 42);
  ASSERT_EQ(a.pilots.per_user.size(), b.pilots.per_user.size());
  for (std::size_t k = 0; k < a.pilots.per_user.size(); ++k)
    EXPECT_EQ(a.pilots.per_user[k], b.pilots.per_user[k]);
  for (std::size_t k = 0; k < a.channels.cascade.size(); ++k)
    EXPECT_EQ(a.channels.cascade[k], b.channels.cascade[k]);

  const TrainSample c = draw_sample(sys, plan, 11, 43);
  EXPECT_NE(a.channels.user_bs[0], c.channels.user_bs[0]);
  const TrainSample d = draw_sample(sys, plan, 11, kValidationStream + 42);
  EXPECT_NE(a.channels.user_bs[0], d.channels.user_bs[0]);
}

TEST(Sampling, BatchesAreChunkInvariant) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);

  const PolicyBatch whole = generate_batch(sys, plan, cfg, 11, 100, 8);
  const PolicyBatch head = generate_batch(sys, plan, cfg, 11, 100, 5);
  const PolicyBatch tail = generate_batch(sys, plan, cfg, 11, 105, 3);

  EXPECT_EQ(whole.features.topRows(head.features.rows()), head.features);
  EXPECT_EQ(whole.features.bottomRows(tail.features.rows()), tail.features);
  EXPECT_EQ(whole.channels[5].bs_irs, tail.channels[0].bs_irs);
  EXPECT_EQ(whole.channels[7].user_bs[1], tail.channels[2].user_bs[1]);
}

TEST(Sampling, BatchRejectsInconsistentConfigs) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  GnnConfig cfg = tiny_gnn(sys, 8);
  cfg.subframes = 4;
  EXPECT_THROW(generate_batch(sys, plan, cfg, 11, 0, 2), ConfigError);
  cfg = tiny_gnn(sys, 8);
  cfg.downlink_power_mw *= 2.0;
  EXPECT_THROW(generate_batch(sys, plan, cfg, 11, 0, 2), ConfigError);
}

TEST(Training, ValidationUtilityImprovesOverTheFirstEpochs) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  TrainingConfig tc = tiny_training(5);
  tc.iterations_per_epoch = 30;
  tc.batch_size = 32;
  tc.max_epochs = 3;

  const TrainResult result = train_policy(sys, plan, cfg, tc);
  ASSERT_EQ(result.history.size(), 3u);
  EXPECT_LT(result.history[0].validation_metric, result.history[1].validation_metric);
  EXPECT_LT(result.history[1].validation_metric, result.history[2].validation_metric);
  EXPECT_EQ(result.best_epoch, 3);
  EXPECT_EQ(result.checkpoint.kind, "policy");
  EXPECT_EQ(result.checkpoint.epoch, 3);
  EXPECT_EQ(result.checkpoint.system_hash, sys.hash());
}

TEST(Training, ReturnsTheBestValidationParameters) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  TrainingConfig tc = tiny_training(6);
  tc.max_epochs = 4;

  const TrainResult result = train_policy(sys, plan, cfg, tc);
  double best = -1e300;
  for (const EpochRecord& r : result.history) best = std::max(best, r.validation_metric);
  EXPECT_DOUBLE_EQ(result.best_validation, best);
  EXPECT_DOUBLE_EQ(result.checkpoint.best_validation, best);

  const std::vector<PolicyBatch> validation =
      chunked_batches(sys, plan, cfg, tc.seed, kValidationStream, tc.validation_size);
  double total = 0.0;
  int count = 0;
  for (const PolicyBatch& chunk : validation) {
    PolicyCache cache;
    const PolicyEval ev = policy_loss(cfg, result.checkpoint.policy, chunk, cache);
    for (double u : ev.utilities) total += u;
    count += chunk.batch;
  }
  EXPECT_NEAR(total / count, best, 1e-12);
}

TEST(Training, EarlyStoppingHonorsPatience) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  TrainingConfig tc = tiny_training(7);
  tc.iterations_per_epoch = 1;
  tc.batch_size = 4;
  tc.initial_lr = 10.0;  // large enough to wreck the policy after epoch one
  tc.max_epochs = 40;
  tc.patience = 2;
  tc.validation_size = 16;

  const TrainResult result = train_policy(sys, plan, cfg, tc);
  EXPECT_TRUE(result.stopped_early);
  EXPECT_LT(static_cast<int>(result.history.size()), tc.max_epochs);
  EXPECT_EQ(static_cast<int>(result.history.size()), result.best_epoch + tc.patience);
}

TEST(Training, AbortsOnNonFiniteLoss) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  const TrainingConfig tc = tiny_training(8);

  PolicyParams poisoned = init_policy(cfg, tc.seed);
  poisoned.phase_head.weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_policy(sys, plan, cfg, tc, &poisoned), NumericError);
}

TEST(Training, EstimatorValidationErrorDecreases) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  TrainingConfig tc = tiny_training(9);
  tc.iterations_per_epoch = 60;
  tc.batch_size = 32;
  tc.max_epochs = 5;

  const TrainResult result = train_estimator(sys, plan, cfg, tc);
  ASSERT_EQ(result.history.size(), 5u);
  EXPECT_GT(result.history.front().validation_metric, result.history.back().validation_metric);
  EXPECT_EQ(result.checkpoint.kind, "estimator");

  // The trained estimator must beat the all-zeros predictor, whose error is
  // the mean squared magnitude of the channels themselves.
  const std::vector<PolicyBatch> validation =
      chunked_batches(sys, plan, cfg, tc.seed, kValidationStream, tc.validation_size);
  double zero_loss = 0.0;
  Eigen::Index n = 0;
  for (const PolicyBatch& chunk : validation) {
    for (int b = 0; b < chunk.batch; ++b)
      for (int k = 0; k < chunk.users; ++k) zero_loss += chunk.channels[b].combined(k).squaredNorm();
    n += static_cast<Eigen::Index>(chunk.batch) * chunk.users;
  }
  zero_loss /= static_cast<double>(n);
  EXPECT_LT(result.best_validation, zero_loss);
}

TEST(Checkpointing, PolicyRoundTripIsExact) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);

  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.config = cfg;
  ckpt.system_hash = sys.hash();
  ckpt.plan_hash = plan.hash();
  ckpt.training_hash = 0xDEED;
  ckpt.best_validation = 3.25;
  ckpt.epoch = 7;
  ckpt.policy = init_policy(cfg, 21);
  ckpt.policy.input_scale_pilots = 1.5e-6;
  ckpt.policy.input_scale_locations = 30.0;

  const auto path = (fresh_dir("irsnet_ckpt_rt") / "model.ckpt").string();
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);

  EXPECT_EQ(back.kind, "policy");
  EXPECT_EQ(back.config.hash(), cfg.hash());
  EXPECT_EQ(back.system_hash, ckpt.system_hash);
  EXPECT_EQ(back.plan_hash, ckpt.plan_hash);
  EXPECT_EQ(back.training_hash, ckpt.training_hash);
  EXPECT_DOUBLE_EQ(back.best_validation, 3.25);
  EXPECT_EQ(back.epoch, 7);
  EXPECT_DOUBLE_EQ(back.policy.input_scale_pilots, 1.5e-6);
  EXPECT_DOUBLE_EQ(back.policy.input_scale_locations, 30.0);

  auto& original = const_cast<PolicyParams&>(ckpt.policy);
  std::vector<std::pair<std::string, const MatR*>> expect;
  visit_policy(original, [&](const std::string& name, MatR& m) { expect.emplace_back(name, &m); });
  std::size_t idx = 0;
  auto& loaded = const_cast<PolicyParams&>(back.policy);
  visit_policy(loaded, [&](const std::string& name, MatR& m) {
    ASSERT_LT(idx, expect.size());
    EXPECT_EQ(name, expect[idx].first);
    EXPECT_EQ(m, *expect[idx].second);
    ++idx;
  });
  EXPECT_EQ(idx, expect.size());
}

TEST(Checkpointing, EstimatorRoundTripKeepsOutputScales) {
  const SystemConfig sys = desk_system();
  const GnnConfig cfg = tiny_gnn(sys, 8);

  Checkpoint ckpt;
  ckpt.kind = "estimator";
  ckpt.config = cfg;
  ckpt.estimator = init_estimator(cfg, 33);
  ckpt.estimator.out_scale_direct = 2.0e-5;
  ckpt.estimator.out_scale_cascade = 7.0e-8;

  const auto path = (fresh_dir("irsnet_ckpt_est") / "model.ckpt").string();
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.kind, "estimator");
  EXPECT_DOUBLE_EQ(back.estimator.out_scale_direct, 2.0e-5);
  EXPECT_DOUBLE_EQ(back.estimator.out_scale_cascade, 7.0e-8);
  EXPECT_EQ(back.estimator.channel_head.weight, ckpt.estimator.channel_head.weight);
}

TEST(Checkpointing, RejectsCorruptedFiles) {
  const SystemConfig sys = desk_system();
  const GnnConfig cfg = tiny_gnn(sys, 8);
  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.config = cfg;
  ckpt.policy = init_policy(cfg, 4);

  const auto dir = fresh_dir("irsnet_ckpt_bad");
  const auto path = (dir / "model.ckpt").string();
  save_checkpoint(path, ckpt);

  auto bytes = read_file_bytes(path);
  bytes[0] ^= 0x5A;
  const auto wrong_magic = (dir / "magic.ckpt").string();
  atomic_write_file(wrong_magic, bytes);
  EXPECT_THROW(load_checkpoint(wrong_magic), ConfigError);

  auto truncated = read_file_bytes(path);
  truncated.resize(truncated.size() / 2);
  const auto short_file = (dir / "short.ckpt").string();
  atomic_write_file(short_file, truncated);
  EXPECT_THROW(load_checkpoint(short_file), ConfigError);
}

TEST(Checkpointing, TrainingWritesLastAndBestFiles) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);
  TrainingConfig tc = tiny_training(10);
  tc.max_epochs = 2;
  const auto dir = fresh_dir("irsnet_train_ckpt");
  tc.checkpoint_dir = dir.string();
  tc.log_path = (dir / "train.csv").string();

  const TrainResult result = train_policy(sys, plan, cfg, tc);
  const Checkpoint best = load_checkpoint((dir / "best.ckpt").string());
  EXPECT_EQ(best.epoch, result.best_epoch);
  EXPECT_DOUBLE_EQ(best.best_validation, result.best_validation);
  const Checkpoint last = load_checkpoint((dir / "last.ckpt").string());
  EXPECT_EQ(last.epoch, 2);

  std::ifstream log(tc.log_path);
  ASSERT_TRUE(log.good());
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "# irsnet training log v1");
  std::getline(log, line);
  EXPECT_EQ(line, "epoch,iteration,lr,train_loss,validation_metric,seconds");
  int rows = 0;
  while (std::getline(log, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, static_cast<int>(result.history.size()));
}

TEST(Evaluation, IsDeterministicForAFixedSeed) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);

  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.config = cfg;
  ckpt.system_hash = sys.hash();
  ckpt.plan_hash = plan.hash();
  ckpt.policy = init_policy(cfg, 12);

  const Evaluation a = evaluate_policy(sys, plan, ckpt, 40, 99);
  const Evaluation b = evaluate_policy(sys, plan, ckpt, 40, 99);
  ASSERT_EQ(a.utilities.size(), b.utilities.size());
  for (std::size_t i = 0; i < a.utilities.size(); ++i)
    EXPECT_EQ(a.utilities[i], b.utilities[i]);
  EXPECT_EQ(a.rates, b.rates);
  EXPECT_EQ(a.mean_utility, b.mean_utility);

  const Evaluation c = evaluate_policy(sys, plan, ckpt, 40, 100);
  EXPECT_NE(a.mean_utility, c.mean_utility);
}

TEST(Evaluation, ChecksHashesUnlessRelaxed) {
  const SystemConfig sys = desk_system();
  const PilotPlan plan = make_pilot_plan(sys, 8, 7);
  const GnnConfig cfg = tiny_gnn(sys, 8);

  Checkpoint ckpt;
  ckpt.kind = "policy";
  ckpt.config = cfg;
  ckpt.system_hash = sys.hash();
  ckpt.plan_hash = plan.hash();
  ckpt.policy = init_policy(cfg, 12);

  SystemConfig more_users = sys;
  more_users.users = 3;
  const PilotPlan plan3 = make_pilot_plan(more_users, 8, 7);
  EXPECT_THROW(evaluate_policy(more_users, plan3, ckpt, 4, 1), ConfigError);

  const Evaluation relaxed = evaluate_policy(more_users, plan3, ckpt, 4, 1, true);
  EXPECT_EQ(relaxed.rates.cols(), 3);

  SystemConfig wrong_antennas = sys;
  wrong_antennas.bs_antennas = 8;
  const PilotPlan plan8 = make_pilot_plan(wrong_antennas, 8, 7);
  EXPECT_THROW(evaluate_policy(wrong_antennas, plan8, ckpt, 4, 1, true), ConfigError);
}

}  // namespace
}  // namespace irsnet
