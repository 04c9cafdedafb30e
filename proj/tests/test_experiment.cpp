#include "irsnet/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace irsnet {
namespace {

std::filesystem::path fresh_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Miniature experiment: every budget small enough that a full command runs
// in well under a second.
ExperimentSpec tiny_spec(const char* out_dir) {
  ExperimentSpec spec = desk_profile();
  spec.id = "tiny";
  spec.out_root = fresh_dir(out_dir).string();
  spec.subframes = 6;
  spec.gnn = gnn_config_for(spec.system, spec.subframes);
  spec.gnn.embed_dim = 24;
  spec.gnn.hidden_init = 32;
  spec.gnn.hidden_update = 24;
  spec.training.iterations_per_epoch = 10;
  spec.training.batch_size = 16;
  spec.training.max_epochs = 2;
  spec.training.validation_size = 32;
  spec.training.calibration_size = 16;
  spec.eval_realizations = 12;
  spec.stats_samples = 200;
  spec.methods = {"gnn", "random-phase"};
  return spec;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int data_rows(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int rows = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    ++rows;
  }
  return rows;
}

TEST(Spec, ProfilesValidate) {
  const ExperimentSpec desk = desk_profile();
  desk.validate();
  EXPECT_EQ(desk.system.users, 2);
  EXPECT_EQ(desk.gnn.subframes, 8);

  const ExperimentSpec paper = paper_profile();
  paper.validate();
  EXPECT_EQ(paper.system.bs_antennas, 8);
  EXPECT_EQ(paper.system.irs_elements(), 100);
  EXPECT_EQ(paper.gnn.embed_dim, 512);
  EXPECT_EQ(paper.plan().total_length(), 45);
}

TEST(Spec, FileOverridesProfileDefaults) {
  const std::string text =
      "experiment.id = custom\n"
      "system.users = 3\n"
      "pilot.length = 18\n"
      "gnn.utility = min\n"
      "training.batch_size = 64\n"
      "eval.methods = gnn lmmse+bcd\n";
  const ExperimentSpec spec = spec_from_kv(KeyValueFile::parse(text), desk_profile());
  EXPECT_EQ(spec.id, "custom");
  EXPECT_EQ(spec.system.users, 3);
  EXPECT_EQ(spec.subframes, 6);
  EXPECT_EQ(spec.gnn.utility, Utility::min);
  EXPECT_EQ(spec.training.batch_size, 64);
  ASSERT_EQ(spec.methods.size(), 2u);
  EXPECT_EQ(spec.methods[1], "lmmse+bcd");
  EXPECT_EQ(spec.gnn.downlink_power_mw, spec.system.downlink_power_mw());
}

TEST(Spec, RejectsBadInput) {
  EXPECT_THROW(spec_from_kv(KeyValueFile::parse("experiment.idd = x\n"), desk_profile()),
               ConfigError);
  EXPECT_THROW(spec_from_kv(KeyValueFile::parse("pilot.length = 9\n"), desk_profile()),
               ConfigError);
  EXPECT_THROW(
      spec_from_kv(KeyValueFile::parse("pilot.length = 12\npilot.subframes = 4\n"), desk_profile()),
      ConfigError);
  EXPECT_THROW(spec_from_kv(KeyValueFile::parse("eval.methods = gnn wmmse\n"), desk_profile()),
               ConfigError);
  EXPECT_THROW(
      spec_from_kv(KeyValueFile::parse("sweep.axis = pilot_length\nsweep.values = 4 9\n"),
                   desk_profile()),
      ConfigError);
  EXPECT_THROW(spec_from_kv(KeyValueFile::parse("sweep.axis = users\nsweep.values = 0\n"),
                            desk_profile()),
               ConfigError);
}

TEST(Spec, RunDirectoryTracksTrainingIdentityOnly) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_hash");
  const std::string base = spec.run_dir();
  EXPECT_NE(base.find("tiny-"), std::string::npos);

  ExperimentSpec other = spec;
  other.eval_realizations = 999;
  other.methods = {"random-phase"};
  other.sweep = SweepAxis::pilot_length;
  other.sweep_values = {6.0, 12.0};
  EXPECT_EQ(other.run_dir(), base);

  other = spec;
  other.gnn.embed_dim = 32;
  EXPECT_NE(other.run_dir(), base);
  other = spec;
  other.training.seed = 99;
  EXPECT_NE(other.run_dir(), base);
}

TEST(Commands, TrainWritesCheckpointAndLogDeterministically) {
  const ExperimentSpec spec = tiny_spec("irsnet_exp_train");
  RunOptions opt;
  const std::string path = cmd_train(spec, opt);
  EXPECT_TRUE(std::filesystem::exists(path));
  const Checkpoint first = load_checkpoint(path);
  EXPECT_EQ(first.kind, "policy");
  EXPECT_EQ(first.system_hash, spec.system.hash());

  const std::string log =
      (std::filesystem::path(spec.run_dir()) / "train_policy.csv").string();
  ASSERT_TRUE(std::filesystem::exists(log));
  EXPECT_GE(data_rows(read_text(log)), 1);

  EXPECT_THROW(cmd_train(spec, opt), ConfigError);
  opt.force = true;
  cmd_train(spec, opt);
  const Checkpoint second = load_checkpoint(path);
  EXPECT_DOUBLE_EQ(second.best_validation, first.best_validation);
}

TEST(Commands, EstimatorTargetWritesItsOwnCheckpoint) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_est");
  spec.training_target = "estimator";
  const std::string path = cmd_train(spec, {});
  EXPECT_NE(path.find("estimator.ckpt"), std::string::npos);
  EXPECT_EQ(load_checkpoint(path).kind, "estimator");
}

TEST(Commands, EvalIsReproducibleByteForByte) {
  const ExperimentSpec spec = tiny_spec("irsnet_exp_eval");
  RunOptions opt;
  cmd_train(spec, opt);
  const std::string path = cmd_eval(spec, opt);
  const std::string once = read_text(path);
  EXPECT_EQ(data_rows(once), spec.eval_realizations);
  EXPECT_NE(once.find("index,utility,rate0,rate1"), std::string::npos);

  EXPECT_THROW(cmd_eval(spec, opt), ConfigError);
  opt.force = true;
  cmd_eval(spec, opt);
  EXPECT_EQ(read_text(path), once);
}

TEST(Commands, SweepCoversTheAxisMethodGrid) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_sweep");
  spec.sweep = SweepAxis::pilot_length;
  spec.sweep_values = {4.0, 12.0};
  spec.methods = {"gnn", "random-phase", "lmmse+bcd"};
  RunOptions opt;
  const std::string path = cmd_sweep(spec, opt);
  const std::string once = read_text(path);
  EXPECT_EQ(data_rows(once), 6);

  opt.force = true;
  opt.workers = 5;
  cmd_sweep(spec, opt);
  EXPECT_EQ(read_text(path), once);
}

TEST(Commands, UserSweepReusesTheStoredCheckpoints) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_users");
  spec.sweep = SweepAxis::users;
  spec.sweep_values = {2.0, 3.0};
  spec.methods = {"gnn", "estgnn+bcd"};
  EXPECT_THROW(cmd_sweep(spec, {}), ConfigError);

  cmd_train(spec, {});
  ExperimentSpec est = spec;
  est.training_target = "estimator";
  cmd_train(est, {});

  const std::string path = cmd_sweep(spec, {});
  EXPECT_EQ(data_rows(read_text(path)), 4);
}

TEST(Commands, UserSweepRejectsAMismatchedPolicyKind) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_userskind");
  cmd_train(spec, {});
  spec.sweep = SweepAxis::users;
  spec.sweep_values = {3.0};
  spec.methods = {"gnn+locations"};
  EXPECT_THROW(cmd_sweep(spec, {}), ConfigError);
}

TEST(Commands, CdfIsMonotoneAndEndsAtOne) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_cdf");
  spec.gnn.utility = Utility::min;
  EXPECT_THROW(cmd_cdf(tiny_spec("irsnet_exp_cdf_sumcheck"), {}), ConfigError);

  cmd_train(spec, {});
  const std::string path = cmd_cdf(spec, {});
  const std::string text = read_text(path);
  EXPECT_EQ(data_rows(text), 2 * spec.eval_realizations);

  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::string prev_method;
  double prev_rate = 0.0, last_cdf = 0.0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string method, rate_s, cdf_s;
    std::getline(row, method, ',');
    std::getline(row, rate_s, ',');
    std::getline(row, cdf_s, ',');
    const double rate = std::stod(rate_s);
    if (method == prev_method) {
      EXPECT_GE(rate, prev_rate);
    } else if (!prev_method.empty()) {
      EXPECT_DOUBLE_EQ(last_cdf, 1.0);
    }
    prev_method = method;
    prev_rate = rate;
    last_cdf = std::stod(cdf_s);
  }
  EXPECT_DOUBLE_EQ(last_cdf, 1.0);
}

TEST(Commands, ArrayResponseCoversBothGrids) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_resp");
  spec.response_azimuth_points = 9;
  spec.response_elevation_points = 5;
  spec.response_bs_points = 11;
  cmd_train(spec, {});
  const std::string surface_path = cmd_array_response(spec, {});
  EXPECT_EQ(data_rows(read_text(surface_path)), 9 * 5);
  const std::string beam_path =
      (std::filesystem::path(spec.run_dir()) / "array_response_bs.csv").string();
  EXPECT_EQ(data_rows(read_text(beam_path)), 11);
  EXPECT_THROW(cmd_array_response(spec, {}), ConfigError);
}

TEST(Commands, FitLmmseStoresLoadableStatistics) {
  const ExperimentSpec spec = tiny_spec("irsnet_exp_stats");
  const std::string path = cmd_fit_lmmse(spec, {});
  const ChannelStatistics stats = load_statistics(path);
  EXPECT_EQ(stats.n_samples, spec.stats_samples);
  EXPECT_EQ(stats.config_hash, spec.system.hash());
  EXPECT_EQ(stats.plan_hash, spec.plan().hash());
}

TEST(Commands, BaselineSkipsTrainedMethodsAndNeedsOneFreeArm) {
  ExperimentSpec spec = tiny_spec("irsnet_exp_base");
  spec.methods = {"gnn", "random-phase", "perfect-csi-bcd"};
  const std::string path = cmd_baseline(spec, {});
  const std::string text = read_text(path);
  EXPECT_EQ(data_rows(text), 2);
  EXPECT_EQ(text.find("gnn"), std::string::npos);

  spec.methods = {"gnn"};
  spec.out_root = fresh_dir("irsnet_exp_base2").string();
  EXPECT_THROW(cmd_baseline(spec, {}), ConfigError);
}

TEST(Cli, ExitCodesFollowTheContract) {
  const char* cli = std::getenv("IRSNET_CLI");
  if (cli == nullptr) GTEST_SKIP() << "IRSNET_CLI not set";
  const std::string bin(cli);
  auto exit_code = [](const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  EXPECT_EQ(exit_code(bin + " help > /dev/null 2>&1"), 0);
  EXPECT_EQ(exit_code(bin + " bogus > /dev/null 2>&1"), 2);
  EXPECT_EQ(exit_code(bin + " sweep --profile desk > /dev/null 2>&1"), 2);
  EXPECT_EQ(exit_code(bin + " train --spec /nonexistent.spec > /dev/null 2>&1"), 2);
}

}  // namespace
}  // namespace irsnet
