#pragma once

#include <atomic>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "irsnet/baselines.hpp"
#include "irsnet/lmmse.hpp"
#include "irsnet/steering.hpp"
#include "irsnet/training.hpp"

namespace irsnet {

// Baseline draws (random reflection patterns) live in their own stream space,
// disjoint from the sample streams used by training and evaluation.
inline constexpr uint64_t kBaselineStream = 5ull << 40;

// ---- experiment description

enum class SweepAxis { none, pilot_length, downlink_power_dbm, uplink_power_dbm, users };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "pilot_length") return SweepAxis::pilot_length;
  if (s == "downlink_power_dbm") return SweepAxis::downlink_power_dbm;
  if (s == "uplink_power_dbm") return SweepAxis::uplink_power_dbm;
  if (s == "users") return SweepAxis::users;
  throw ConfigError("unknown sweep axis: " + s);
}

inline std::string sweep_axis_to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::pilot_length: return "pilot_length";
    case SweepAxis::downlink_power_dbm: return "downlink_power_dbm";
    case SweepAxis::uplink_power_dbm: return "uplink_power_dbm";
    case SweepAxis::users: return "users";
  }
  throw ConfigError("unreachable sweep axis");
}

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {
      "gnn", "gnn+locations", "lmmse+bcd", "estgnn+bcd", "perfect-csi-bcd", "random-phase"};
  return methods;
}

// Everything one run needs: deployment, sounding schedule, network shape,
// optimizer settings, comparison set, and output addressing. The hash over
// all semantic fields names the output directory, so a changed configuration
// can never silently overwrite an older run's artifacts.
struct ExperimentSpec {
  std::string id = "desk";
  std::string out_root = "runs";
  SystemConfig system;
  int subframes = 8;
  uint64_t plan_seed = 4242;
  GnnConfig gnn;
  TrainingConfig training;
  std::string training_target = "policy";  // or "estimator"
  SweepAxis sweep = SweepAxis::none;
  std::vector<double> sweep_values;
  std::vector<std::string> methods = {"gnn", "perfect-csi-bcd", "random-phase"};
  int eval_realizations = 500;
  uint64_t eval_seed = 777;
  int stats_samples = 10000;
  uint64_t stats_seed = 31337;
  int response_azimuth_points = 181;
  int response_elevation_points = 91;
  int response_bs_points = 361;

  void validate() const {
    system.validate();
    gnn.validate();
    training.validate();
    if (subframes < 1) throw ConfigError("pilot plan needs at least one sub-frame");
    if (training_target != "policy" && training_target != "estimator")
      throw ConfigError("training target must be policy or estimator");
    if (eval_realizations < 1) throw ConfigError("evaluation needs at least one realization");
    if (stats_samples < 2) throw ConfigError("statistics fitting needs at least two samples");
    if (response_azimuth_points < 2 || response_elevation_points < 2 || response_bs_points < 2)
      throw ConfigError("response grids need at least two points per axis");
    if (methods.empty()) throw ConfigError("the method list must not be empty");
    for (const auto& m : methods) {
      bool ok = false;
      for (const auto& k : known_methods()) ok = ok || k == m;
      if (!ok) throw ConfigError("unknown method: " + m);
    }
    if (sweep != SweepAxis::none && sweep_values.empty())
      throw ConfigError("sweep requires at least one axis value");
    for (double v : sweep_values) {
      if (!(v > 0.0) && sweep != SweepAxis::downlink_power_dbm &&
          sweep != SweepAxis::uplink_power_dbm)
        throw ConfigError("sweep values must be positive");
      if (sweep == SweepAxis::pilot_length) {
        const int len = static_cast<int>(v);
        if (static_cast<double>(len) != v || len < system.users || len % system.users != 0)
          throw ConfigError("pilot lengths must be positive multiples of the user count");
      }
      if (sweep == SweepAxis::users) {
        const int k = static_cast<int>(v);
        if (static_cast<double>(k) != v || k < 1)
          throw ConfigError("user counts must be positive integers");
        if (!system.fixed_users.empty())
          throw ConfigError("user-count sweeps require region sampling, not fixed users");
      }
    }
    require_consistent(system, make_pilot_plan(system, subframes, plan_seed), gnn);
  }

  // Covers exactly the fields that define the run's trained artifacts, so a
  // train invocation and the analysis commands that consume its checkpoints
  // resolve to the same directory. Evaluation settings only choose which
  // analysis files appear there; rewriting one needs an explicit force.
  uint64_t hash() const {
    Hasher h;
    h.str(id);
    h.u64(system.hash()).i64(subframes).u64(plan_seed);
    h.u64(gnn.hash()).u64(training.hash());
    return h.digest();
  }

  PilotPlan plan() const { return make_pilot_plan(system, subframes, plan_seed); }

  // Output directory, addressed by the semantic hash.
  std::string run_dir() const {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash()));
    return (std::filesystem::path(out_root) / (id + "-" + hex)).string();
  }
};

// Named starting points; a spec file overrides individual keys.
inline ExperimentSpec desk_profile() {
  ExperimentSpec spec;
  spec.id = "desk";
  spec.system.bs_antennas = 4;
  spec.system.irs_rows = 4;
  spec.system.irs_cols = 4;
  spec.system.users = 2;
  spec.subframes = 8;
  spec.gnn = gnn_config_for(spec.system, spec.subframes);
  spec.training.batch_size = 256;
  spec.training.max_epochs = 20;
  spec.training.validation_size = 512;
  spec.eval_realizations = 500;
  return spec;
}

inline ExperimentSpec paper_profile() {
  ExperimentSpec spec;
  spec.id = "paper";
  spec.system.bs_antennas = 8;
  spec.system.irs_rows = 10;
  spec.system.irs_cols = 10;
  spec.system.users = 3;
  spec.subframes = 15;
  spec.gnn = gnn_config_for(spec.system, spec.subframes);
  spec.gnn.embed_dim = 512;
  spec.gnn.hidden_init = 1024;
  spec.gnn.hidden_update = 512;
  spec.training.batch_size = 1024;
  spec.training.max_epochs = 80;
  spec.training.validation_size = 1024;
  spec.eval_realizations = 1000;
  return spec;
}

inline ExperimentSpec spec_from_kv(const KeyValueFile& kv, ExperimentSpec spec) {
  spec.id = kv.get_string("experiment.id", spec.id);
  spec.out_root = kv.get_string("experiment.out", spec.out_root);
  spec.system = system_config_from_kv(kv, spec.system);

  if (kv.has("pilot.length")) {
    const int length = kv.get_int("pilot.length", 0);
    if (length < spec.system.users || length % spec.system.users != 0)
      throw ConfigError("pilot.length must be a positive multiple of the user count");
    spec.subframes = length / spec.system.users;
    if (kv.has("pilot.subframes") &&
        kv.get_int("pilot.subframes", spec.subframes) != spec.subframes)
      throw ConfigError("pilot.length and pilot.subframes disagree");
  } else {
    spec.subframes = kv.get_int("pilot.subframes", spec.subframes);
  }
  spec.plan_seed = static_cast<uint64_t>(kv.get_int("pilot.seed", static_cast<int>(spec.plan_seed)));

  GnnConfig base = gnn_config_for(spec.system, spec.subframes);
  base.depth = kv.get_int("gnn.depth", spec.gnn.depth);
  base.embed_dim = kv.get_int("gnn.embed_dim", spec.gnn.embed_dim);
  base.hidden_init = kv.get_int("gnn.hidden_init", spec.gnn.hidden_init);
  base.hidden_update = kv.get_int("gnn.hidden_update", spec.gnn.hidden_update);
  base.use_locations = kv.get_bool("gnn.use_locations", spec.gnn.use_locations);
  base.utility =
      utility_from_string(kv.get_string("gnn.utility", to_string(spec.gnn.utility)));
  spec.gnn = base;

  spec.training.initial_lr = kv.get_double("training.initial_lr", spec.training.initial_lr);
  spec.training.lr_decay = kv.get_double("training.lr_decay", spec.training.lr_decay);
  spec.training.lr_every = kv.get_int("training.lr_every", spec.training.lr_every);
  spec.training.iterations_per_epoch =
      kv.get_int("training.iterations_per_epoch", spec.training.iterations_per_epoch);
  spec.training.batch_size = kv.get_int("training.batch_size", spec.training.batch_size);
  spec.training.max_epochs = kv.get_int("training.max_epochs", spec.training.max_epochs);
  spec.training.patience = kv.get_int("training.patience", spec.training.patience);
  spec.training.validation_size =
      kv.get_int("training.validation_size", spec.training.validation_size);
  spec.training.calibration_size =
      kv.get_int("training.calibration_size", spec.training.calibration_size);
  spec.training.seed =
      static_cast<uint64_t>(kv.get_int("training.seed", static_cast<int>(spec.training.seed)));
  spec.training_target = kv.get_string("training.target", spec.training_target);

  if (kv.has("sweep.axis")) {
    spec.sweep = sweep_axis_from_string(kv.require_string("sweep.axis"));
    spec.sweep_values = kv.get_doubles("sweep.values", spec.sweep_values);
  }
  spec.methods = kv.get_words("eval.methods", spec.methods);
  spec.eval_realizations = kv.get_int("eval.realizations", spec.eval_realizations);
  spec.eval_seed = static_cast<uint64_t>(kv.get_int("eval.seed", static_cast<int>(spec.eval_seed)));
  spec.stats_samples = kv.get_int("eval.stats_samples", spec.stats_samples);
  spec.stats_seed =
      static_cast<uint64_t>(kv.get_int("eval.stats_seed", static_cast<int>(spec.stats_seed)));
  spec.response_azimuth_points =
      kv.get_int("response.azimuth_points", spec.response_azimuth_points);
  spec.response_elevation_points =
      kv.get_int("response.elevation_points", spec.response_elevation_points);
  spec.response_bs_points = kv.get_int("response.bs_points", spec.response_bs_points);

  kv.reject_unconsumed();
  spec.validate();
  return spec;
}

// Runtime knobs that do not change results, only where and how fast.
struct RunOptions {
  int workers = 1;
  bool force = false;
  std::string checkpoint_path;  // overrides the run directory's default
};

namespace detail {

// Index-parallel loop; every index's work must depend only on its own inputs,
// which keeps results identical for any worker count.
template <class Fn>
void parallel_for(int total, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, total));
  if (workers == 1) {
    for (int i = 0; i < total; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto body = [&] {
    for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
      {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (err) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline void write_text(const std::string& path, const std::string& text, bool force) {
  if (!force && std::filesystem::exists(path))
    throw ConfigError("output already exists: " + path + " (pass --force to overwrite)");
  atomic_write_file(path, std::vector<char>(text.begin(), text.end()));
}

inline double sample_mean(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

inline double standard_error(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0) / static_cast<double>(v.size()));
}

inline ChannelSet channels_from_estimates(const std::vector<MatC>& combined, int irs_elements) {
  ChannelSet cs;
  const auto m = combined.empty() ? 0 : combined[0].rows();
  cs.bs_irs = MatC::Zero(m, irs_elements);
  cs.user_bs.resize(combined.size());
  cs.user_irs.assign(combined.size(), VecC::Zero(irs_elements));
  cs.cascade.resize(combined.size());
  for (std::size_t k = 0; k < combined.size(); ++k) {
    cs.user_bs[k] = combined[k].col(0);
    cs.cascade[k] = combined[k].rightCols(irs_elements);
  }
  return cs;
}

// Utility-appropriate model-based solve on the given (possibly estimated)
// channels: sum rate runs coordinate descent, min rate runs the annealed
// fairness optimizer.
inline Solution model_solve(const ChannelSet& cs, double power, double noise, Utility utility) {
  if (utility == Utility::sum) return bcd_optimize(cs, power, noise).solution;
  return maxmin_optimize(cs, power, noise).solution;
}

enum class CsiSource { perfect, lmmse, estgnn };

}  // namespace detail

// Per-realization utilities of the model-based arms. All arms see the same
// realizations (same sample streams), so comparisons are paired.
inline std::vector<double> optimizer_utilities(const SystemConfig& sys, const PilotPlan& plan,
                                               int realizations, uint64_t eval_seed,
                                               Utility utility, detail::CsiSource source,
                                               const ChannelStatistics* stats,
                                               const Checkpoint* estimator, int workers) {
  if (source == detail::CsiSource::lmmse && stats == nullptr)
    throw ConfigError("LMMSE scoring needs fitted channel statistics");
  if (source == detail::CsiSource::estgnn && estimator == nullptr)
    throw ConfigError("estimator scoring needs an estimator checkpoint");
  const double power = sys.downlink_power_mw();
  const double noise = sys.downlink_noise_mw();
  const int n_elems = sys.irs_elements();
  std::vector<double> out(realizations);
  detail::parallel_for(realizations, workers, [&](int i) {
    const TrainSample s = draw_sample(sys, plan, eval_seed, kEvalStream + static_cast<uint64_t>(i));
    ChannelSet work;
    switch (source) {
      case detail::CsiSource::perfect:
        work = s.channels;
        break;
      case detail::CsiSource::lmmse: {
        std::vector<MatC> est(s.pilots.per_user.size());
        for (std::size_t k = 0; k < est.size(); ++k)
          est[k] = lmmse_estimate(*stats, static_cast<int>(k), s.pilots.per_user[k]);
        work = detail::channels_from_estimates(est, n_elems);
        break;
      }
      case detail::CsiSource::estgnn: {
        PolicyBatch one;
        one.batch = 1;
        one.users = sys.users;
        one.features = build_features(estimator->config, s.pilots.per_user,
                                      estimator->config.use_locations ? &s.locations : nullptr);
        EstCache cache;
        est_forward(estimator->config, estimator->estimator, one, cache);
        std::vector<MatC> est(static_cast<std::size_t>(sys.users));
        for (int k = 0; k < sys.users; ++k)
          est[k] = est_extract(estimator->config, estimator->estimator, cache, k);
        work = detail::channels_from_estimates(est, n_elems);
        break;
      }
    }
    const Solution sol = detail::model_solve(work, power, noise, utility);
    out[i] = utility_value(user_rates(s.channels, sol, noise), utility);
  });
  return out;
}

// Random reflections with rate-aware beamforming; the fairness variant
// rebalances transmit power across the WMMSE beam directions.
inline std::vector<double> random_phase_utilities(const SystemConfig& sys, const PilotPlan& plan,
                                                  int realizations, uint64_t eval_seed,
                                                  Utility utility, int workers) {
  const double power = sys.downlink_power_mw();
  const double noise = sys.downlink_noise_mw();
  std::vector<double> out(realizations);
  detail::parallel_for(realizations, workers, [&](int i) {
    const TrainSample s = draw_sample(sys, plan, eval_seed, kEvalStream + static_cast<uint64_t>(i));
    Rng rng = Rng::substream(eval_seed, kBaselineStream + static_cast<uint64_t>(i));
    Solution sol = random_phase_baseline(s.channels, power, noise, rng);
    if (utility == Utility::min) {
      const MatC geff = effective_matrix(s.channels, sol.phases);
      sol.beams = rebalance_beams(geff, sol.beams, power, noise);
    }
    out[i] = utility_value(user_rates(s.channels, sol, noise), utility);
  });
  return out;
}

// ---- commands

// Artifacts a sweep point needs, trained in-line or loaded for reuse.
struct MethodArtifacts {
  std::optional<Checkpoint> policy;
  std::optional<Checkpoint> policy_locations;
  std::optional<Checkpoint> estimator;
  std::optional<ChannelStatistics> stats;
};

struct MethodScore {
  std::string method;
  double mean = 0.0;
  double se = 0.0;
  std::vector<double> samples;
};

inline MethodScore score_method(const std::string& method, const SystemConfig& sys,
                                const PilotPlan& plan, const ExperimentSpec& spec,
                                const MethodArtifacts& art, bool relaxed_hash, int workers) {
  MethodScore score;
  score.method = method;
  const Utility utility = spec.gnn.utility;
  if (method == "gnn" || method == "gnn+locations") {
    const auto& ckpt = method == "gnn" ? art.policy : art.policy_locations;
    if (!ckpt) throw ConfigError("no trained policy available for method " + method);
    score.samples = evaluate_policy(sys, plan, *ckpt, spec.eval_realizations, spec.eval_seed,
                                    relaxed_hash)
                        .utilities;
  } else if (method == "lmmse+bcd") {
    score.samples =
        optimizer_utilities(sys, plan, spec.eval_realizations, spec.eval_seed, utility,
                            detail::CsiSource::lmmse, &*art.stats, nullptr, workers);
  } else if (method == "estgnn+bcd") {
    if (!art.estimator) throw ConfigError("no trained estimator available for method " + method);
    score.samples =
        optimizer_utilities(sys, plan, spec.eval_realizations, spec.eval_seed, utility,
                            detail::CsiSource::estgnn, nullptr, &*art.estimator, workers);
  } else if (method == "perfect-csi-bcd") {
    score.samples = optimizer_utilities(sys, plan, spec.eval_realizations, spec.eval_seed, utility,
                                        detail::CsiSource::perfect, nullptr, nullptr, workers);
  } else if (method == "random-phase") {
    score.samples = random_phase_utilities(sys, plan, spec.eval_realizations, spec.eval_seed,
                                           utility, workers);
  } else {
    throw ConfigError("unknown method: " + method);
  }
  score.mean = detail::sample_mean(score.samples);
  score.se = detail::standard_error(score.samples, score.mean);
  return score;
}

inline bool needs(const std::vector<std::string>& methods, const std::string& name) {
  for (const auto& m : methods)
    if (m == name) return true;
  return false;
}

// Trains the spec's target model and writes the best checkpoint plus the
// per-epoch log into the run directory. Returns the checkpoint path.
inline std::string cmd_train(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const PilotPlan plan = spec.plan();

  TrainingConfig tc = spec.training;
  const bool policy = spec.training_target == "policy";
  const std::string name = policy ? "policy.ckpt" : "estimator.ckpt";
  const std::string ckpt_path = (std::filesystem::path(dir) / name).string();
  if (!opt.force && std::filesystem::exists(ckpt_path))
    throw ConfigError("output already exists: " + ckpt_path + " (pass --force to overwrite)");
  tc.log_path =
      (std::filesystem::path(dir) / (policy ? "train_policy.csv" : "train_estimator.csv")).string();
  tc.checkpoint_dir.clear();

  const TrainResult result =
      policy ? train_policy(spec.system, plan, spec.gnn, tc) : train_estimator(spec.system, plan, spec.gnn, tc);
  save_checkpoint(ckpt_path, result.checkpoint);
  return ckpt_path;
}

inline std::string default_checkpoint(const ExperimentSpec& spec, const RunOptions& opt,
                                      const char* name) {
  if (!opt.checkpoint_path.empty()) return opt.checkpoint_path;
  return (std::filesystem::path(spec.run_dir()) / name).string();
}

// Scores a stored checkpoint on fresh realizations; one CSV row per sample.
inline std::string cmd_eval(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const Checkpoint ckpt = load_checkpoint(default_checkpoint(spec, opt, "policy.ckpt"));
  const Evaluation eval =
      evaluate_policy(spec.system, spec.plan(), ckpt, spec.eval_realizations, spec.eval_seed);

  std::string text = "# irsnet eval v1\n";
  text += "index,utility";
  for (int k = 0; k < spec.system.users; ++k) text += ",rate" + std::to_string(k);
  text += "\n";
  for (int i = 0; i < spec.eval_realizations; ++i) {
    text += std::to_string(i) + "," + format_double(eval.utilities[i]);
    for (int k = 0; k < spec.system.users; ++k) text += "," + format_double(eval.rates(i, k));
    text += "\n";
  }
  const std::string path = (std::filesystem::path(dir) / "eval.csv").string();
  detail::write_text(path, text, opt.force);
  return path;
}

namespace detail {

// System/plan/config for one sweep point.
struct SweepPoint {
  SystemConfig system;
  PilotPlan plan;
  GnnConfig gnn;
};

inline SweepPoint sweep_point(const ExperimentSpec& spec, double value) {
  SweepPoint pt;
  pt.system = spec.system;
  int subframes = spec.subframes;
  switch (spec.sweep) {
    case SweepAxis::none:
      throw ConfigError("sweep requires an axis");
    case SweepAxis::pilot_length:
      subframes = static_cast<int>(value) / spec.system.users;
      break;
    case SweepAxis::downlink_power_dbm:
      pt.system.downlink_power_dbm = value;
      break;
    case SweepAxis::uplink_power_dbm:
      pt.system.uplink_power_dbm = value;
      break;
    case SweepAxis::users:
      pt.system.users = static_cast<int>(value);
      break;
  }
  pt.plan = make_pilot_plan(pt.system, subframes, spec.plan_seed);
  pt.gnn = gnn_config_for(pt.system, subframes);
  pt.gnn.depth = spec.gnn.depth;
  pt.gnn.embed_dim = spec.gnn.embed_dim;
  pt.gnn.hidden_init = spec.gnn.hidden_init;
  pt.gnn.hidden_update = spec.gnn.hidden_update;
  pt.gnn.use_locations = spec.gnn.use_locations;
  pt.gnn.utility = spec.gnn.utility;
  return pt;
}

inline MethodArtifacts point_artifacts(const ExperimentSpec& spec, const RunOptions& opt,
                                       const SweepPoint& pt, bool reuse_mode) {
  MethodArtifacts art;
  if (needs(spec.methods, "gnn") || needs(spec.methods, "gnn+locations")) {
    if (reuse_mode) {
      const Checkpoint ckpt = load_checkpoint(default_checkpoint(spec, opt, "policy.ckpt"));
      const std::string expected = ckpt.config.use_locations ? "gnn+locations" : "gnn";
      if (!needs(spec.methods, expected) ||
          (needs(spec.methods, "gnn") && ckpt.config.use_locations) ||
          (needs(spec.methods, "gnn+locations") && !ckpt.config.use_locations))
        throw ConfigError("stored policy checkpoint is a " + expected +
                          " model; list that method for user-count sweeps");
      if (ckpt.config.use_locations)
        art.policy_locations = ckpt;
      else
        art.policy = ckpt;
    } else {
      if (needs(spec.methods, "gnn")) {
        GnnConfig cfg = pt.gnn;
        cfg.use_locations = false;
        art.policy = train_policy(pt.system, pt.plan, cfg, spec.training).checkpoint;
      }
      if (needs(spec.methods, "gnn+locations")) {
        GnnConfig cfg = pt.gnn;
        cfg.use_locations = true;
        art.policy_locations = train_policy(pt.system, pt.plan, cfg, spec.training).checkpoint;
      }
    }
  }
  if (needs(spec.methods, "estgnn+bcd")) {
    if (reuse_mode) {
      const std::string path =
          opt.checkpoint_path.empty()
              ? (std::filesystem::path(spec.run_dir()) / "estimator.ckpt").string()
              : opt.checkpoint_path;
      art.estimator = load_checkpoint(path);
      if (art.estimator->kind != "estimator")
        throw ConfigError("estgnn+bcd needs an estimator checkpoint");
      require_consistent(pt.system, pt.plan, art.estimator->config);
    } else {
      GnnConfig cfg = pt.gnn;
      art.estimator = train_estimator(pt.system, pt.plan, cfg, spec.training).checkpoint;
    }
  }
  if (needs(spec.methods, "lmmse+bcd"))
    art.stats = fit_statistics_mc(pt.system, pt.plan, spec.stats_samples, spec.stats_seed);
  return art;
}

}  // namespace detail

// One row per (axis value, method): paired mean utility with its standard
// error. Trained arms are fitted in-line per point, except user-count sweeps,
// which reuse the stored checkpoints across the axis.
inline std::string cmd_sweep(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  if (spec.sweep == SweepAxis::none) throw ConfigError("sweep requires an axis in the spec");
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const bool reuse_mode = spec.sweep == SweepAxis::users;

  std::string text = "# irsnet sweep v1\n";
  text += "# axis: " + sweep_axis_to_string(spec.sweep) + "\n";
  text += "axis_value,method,mean_utility,stderr,n\n";
  for (double value : spec.sweep_values) {
    const detail::SweepPoint pt = detail::sweep_point(spec, value);
    const MethodArtifacts art = detail::point_artifacts(spec, opt, pt, reuse_mode);
    for (const auto& method : spec.methods) {
      const MethodScore s =
          score_method(method, pt.system, pt.plan, spec, art, reuse_mode, opt.workers);
      text += format_double(value) + "," + method + "," + format_double(s.mean) + "," +
              format_double(s.se) + "," + std::to_string(s.samples.size()) + "\n";
    }
  }
  const std::string path = (std::filesystem::path(dir) / "sweep.csv").string();
  detail::write_text(path, text, opt.force);
  return path;
}

// Empirical distribution of per-realization minimum rates, one block per
// method, each sorted ascending.
inline std::string cmd_cdf(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  if (spec.gnn.utility != Utility::min)
    throw ConfigError("the rate distribution command needs a min-rate spec");
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const PilotPlan plan = spec.plan();

  MethodArtifacts art;
  if (needs(spec.methods, "gnn") || needs(spec.methods, "gnn+locations")) {
    const Checkpoint ckpt = load_checkpoint(default_checkpoint(spec, opt, "policy.ckpt"));
    if (ckpt.config.utility != Utility::min)
      throw ConfigError("the stored checkpoint is not a min-rate model");
    if (ckpt.config.use_locations)
      art.policy_locations = ckpt;
    else
      art.policy = ckpt;
  }
  if (needs(spec.methods, "lmmse+bcd"))
    art.stats = fit_statistics_mc(spec.system, plan, spec.stats_samples, spec.stats_seed);
  if (needs(spec.methods, "estgnn+bcd")) {
    art.estimator = load_checkpoint(
        opt.checkpoint_path.empty()
            ? (std::filesystem::path(spec.run_dir()) / "estimator.ckpt").string()
            : opt.checkpoint_path);
    if (art.estimator->kind != "estimator")
      throw ConfigError("estgnn+bcd needs an estimator checkpoint");
    require_consistent(spec.system, plan, art.estimator->config);
  }

  std::string text = "# irsnet cdf v1\n";
  text += "method,min_rate,cdf\n";
  for (const auto& method : spec.methods) {
    MethodScore s = score_method(method, spec.system, plan, spec, art, false, opt.workers);
    std::sort(s.samples.begin(), s.samples.end());
    const auto n = static_cast<double>(s.samples.size());
    for (std::size_t i = 0; i < s.samples.size(); ++i)
      text += method + "," + format_double(s.samples[i]) + "," +
              format_double(static_cast<double>(i + 1) / n) + "\n";
  }
  const std::string path = (std::filesystem::path(dir) / "cdf.csv").string();
  detail::write_text(path, text, opt.force);
  return path;
}

// Learned responses of one realization's solution: the surface swept over
// reflection directions with the incident direction fixed toward the BS, and
// the first beam swept over departure azimuths.
inline std::string cmd_array_response(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const PilotPlan plan = spec.plan();
  const Checkpoint ckpt = load_checkpoint(default_checkpoint(spec, opt, "policy.ckpt"));
  require_consistent(spec.system, plan, ckpt.config);

  const TrainSample probe = draw_sample(spec.system, plan, spec.eval_seed, kEvalStream);
  const Solution sol =
      policy_decide(ckpt.config, ckpt.policy, probe.pilots.per_user,
                    ckpt.config.use_locations ? &probe.locations : nullptr);
  const Angles toward_bs = angles_between(spec.system.irs_location, spec.system.bs_location);

  const int naz = spec.response_azimuth_points;
  const int nel = spec.response_elevation_points;
  std::string surface = "# irsnet array response v1\n";
  surface += "azimuth,elevation,gain\n";
  for (int i = 0; i < naz; ++i) {
    const double az = -kPi / 2 + kPi * i / (naz - 1);
    for (int j = 0; j < nel; ++j) {
      const double el = -kPi / 2 + (kPi / 2) * j / (nel - 1);
      const double g = reflection_response(sol.phases, spec.system.irs_rows, spec.system.irs_cols,
                                           toward_bs, {az, el});
      surface += format_double(az) + "," + format_double(el) + "," + format_double(g) + "\n";
    }
  }
  const std::string surface_path = (std::filesystem::path(dir) / "array_response_irs.csv").string();
  detail::write_text(surface_path, surface, opt.force);

  const int nbs = spec.response_bs_points;
  std::string beam = "# irsnet array response v1\n";
  beam += "azimuth,gain\n";
  for (int i = 0; i < nbs; ++i) {
    const double az = -kPi + 2 * kPi * i / (nbs - 1);
    beam += format_double(az) + "," +
            format_double(transmit_response(sol.beams.col(0), {az, 0.0})) + "\n";
  }
  const std::string beam_path = (std::filesystem::path(dir) / "array_response_bs.csv").string();
  detail::write_text(beam_path, beam, opt.force);
  return surface_path;
}

// Fits the channel statistics the linear estimator uses and stores them.
inline std::string cmd_fit_lmmse(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "stats.bin").string();
  if (!opt.force && std::filesystem::exists(path))
    throw ConfigError("output already exists: " + path + " (pass --force to overwrite)");
  const ChannelStatistics stats =
      fit_statistics_mc(spec.system, spec.plan(), spec.stats_samples, spec.stats_seed);
  save_statistics(path, stats);
  return path;
}

// Scores the training-free arms of the spec's method list at its own
// operating point; trained methods are skipped here, not failed, so one spec
// file can drive every command.
inline std::string cmd_baseline(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  const std::string dir = spec.run_dir();
  std::filesystem::create_directories(dir);
  const PilotPlan plan = spec.plan();

  MethodArtifacts art;
  std::string text = "# irsnet baseline v1\n";
  text += "method,mean_utility,stderr,n\n";
  bool any = false;
  for (const auto& method : spec.methods) {
    if (method == "gnn" || method == "gnn+locations" || method == "estgnn+bcd") continue;
    any = true;
    if (method == "lmmse+bcd" && !art.stats)
      art.stats = fit_statistics_mc(spec.system, plan, spec.stats_samples, spec.stats_seed);
    const MethodScore s = score_method(method, spec.system, plan, spec, art, false, opt.workers);
    text += method + "," + format_double(s.mean) + "," + format_double(s.se) + "," +
            std::to_string(s.samples.size()) + "\n";
  }
  if (!any) throw ConfigError("the method list has no training-free methods to score");
  const std::string path = (std::filesystem::path(dir) / "baseline.csv").string();
  detail::write_text(path, text, opt.force);
  return path;
}

}  // namespace irsnet
