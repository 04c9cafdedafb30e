#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "irsnet/gnn.hpp"
#include "irsnet/pilots.hpp"

namespace irsnet {

// Every sample is addressed by (seed, index): the index selects an
// independent substream, so a batch is the same bytes no matter how the
// loop is chunked. The bases keep training, validation, calibration, and
// evaluation draws disjoint under one seed.
inline constexpr uint64_t kValidationStream = 1ull << 40;
inline constexpr uint64_t kCalibrationStream = 2ull << 40;
inline constexpr uint64_t kTrainingStream = 3ull << 40;
inline constexpr uint64_t kEvalStream = 4ull << 40;

// Validation and evaluation run in bounded slices so paper-sized sets do not
// hold every activation in memory at once.
inline constexpr int kForwardChunk = 256;

struct TrainingConfig {
  double initial_lr = 1e-3;
  double lr_decay = 0.98;
  int lr_every = 300;  // iterations between decay steps
  int iterations_per_epoch = 100;
  int batch_size = 1024;
  int max_epochs = 20;
  int patience = 10;  // epochs without validation improvement before stopping
  int validation_size = 1024;
  int calibration_size = 256;  // samples used to fit input/output scalings
  uint64_t seed = 1;
  std::string log_path;        // per-epoch CSV appended here when non-empty
  std::string checkpoint_dir;  // last/best checkpoints written when non-empty

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("initial learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0))
      throw ConfigError("learning-rate decay must lie in (0, 1]");
    if (lr_every < 1) throw ConfigError("learning-rate decay interval must be positive");
    if (iterations_per_epoch < 1 || batch_size < 1 || max_epochs < 1)
      throw ConfigError("training counts must be positive");
    if (patience < 1) throw ConfigError("early-stopping patience must be at least one epoch");
    if (validation_size < 1 || calibration_size < 1)
      throw ConfigError("validation and calibration sizes must be positive");
  }

  uint64_t hash() const {
    Hasher h;
    h.f64(initial_lr).f64(lr_decay);
    h.i64(lr_every).i64(iterations_per_epoch).i64(batch_size).i64(max_epochs);
    h.i64(patience).i64(validation_size).i64(calibration_size);
    h.i64(static_cast<int64_t>(seed));
    return h.digest();
  }
};

// Step schedule over the global 1-indexed iteration counter: the rate decays
// by a fixed factor once per interval.
inline double lr_at(const TrainingConfig& tc, int64_t iteration) {
  if (iteration < 1) throw ConfigError("iterations are counted from 1");
  const auto steps = static_cast<double>((iteration - 1) / tc.lr_every);
  return tc.initial_lr * std::pow(tc.lr_decay, steps);
}

// GnnConfig fields that must agree with the physical layer, filled from it.
inline GnnConfig gnn_config_for(const SystemConfig& sys, int subframes) {
  GnnConfig cfg;
  cfg.bs_antennas = sys.bs_antennas;
  cfg.irs_elements = sys.irs_elements();
  cfg.subframes = subframes;
  cfg.downlink_power_mw = sys.downlink_power_mw();
  cfg.downlink_noise_mw = sys.downlink_noise_mw();
  return cfg;
}

inline void require_consistent(const SystemConfig& sys, const PilotPlan& plan,
                               const GnnConfig& cfg) {
  if (cfg.bs_antennas != sys.bs_antennas)
    throw ConfigError("network and system disagree on the antenna count");
  if (cfg.irs_elements != sys.irs_elements())
    throw ConfigError("network and system disagree on the surface size");
  if (cfg.subframes != plan.subframes)
    throw ConfigError("network and pilot plan disagree on the sub-frame count");
  if (plan.frame_length != sys.users)
    throw ConfigError("pilot plan was built for a different user count");
  if (cfg.downlink_power_mw != sys.downlink_power_mw() ||
      cfg.downlink_noise_mw != sys.downlink_noise_mw())
    throw ConfigError("network and system disagree on the downlink budget");
}

// One fresh draw: user placement, channels, then a sounded uplink.
struct TrainSample {
  std::vector<Vec3> locations;
  ChannelSet channels;
  ReceivedPilots pilots;
};

inline TrainSample draw_sample(const SystemConfig& sys, const PilotPlan& plan, uint64_t seed,
                               uint64_t index) {
  Rng rng = Rng::substream(seed, index);
  TrainSample s;
  s.locations = sample_user_locations(sys, rng);
  s.channels = sample_channels(sys, s.locations, rng);
  const MatC raw = simulate_uplink(s.channels, plan, sys.uplink_noise_mw(), rng);
  s.pilots = decorrelate(raw, plan, sys.uplink_noise_mw());
  return s;
}

// Batch of consecutive sample indices, one feature row per user.
inline PolicyBatch generate_batch(const SystemConfig& sys, const PilotPlan& plan,
                                  const GnnConfig& cfg, uint64_t seed, uint64_t first_index,
                                  int count) {
  if (count < 1) throw ConfigError("generate_batch needs a positive sample count");
  require_consistent(sys, plan, cfg);
  PolicyBatch out;
  out.batch = count;
  out.users = sys.users;
  out.features.resize(static_cast<Eigen::Index>(count) * sys.users, cfg.feature_dim());
  out.channels.resize(count);
  for (int i = 0; i < count; ++i) {
    TrainSample s = draw_sample(sys, plan, seed, first_index + static_cast<uint64_t>(i));
    out.features.middleRows(static_cast<Eigen::Index>(i) * sys.users, sys.users) =
        build_features(cfg, s.pilots.per_user, cfg.use_locations ? &s.locations : nullptr);
    out.channels[i] = std::move(s.channels);
  }
  return out;
}

inline std::vector<PolicyBatch> chunked_batches(const SystemConfig& sys, const PilotPlan& plan,
                                                const GnnConfig& cfg, uint64_t seed, uint64_t base,
                                                int total) {
  std::vector<PolicyBatch> out;
  for (int start = 0; start < total; start += kForwardChunk) {
    const int count = std::min(kForwardChunk, total - start);
    out.push_back(generate_batch(sys, plan, cfg, seed, base + static_cast<uint64_t>(start), count));
  }
  return out;
}

// ---- checkpoints

inline constexpr uint64_t kCheckpointMagic = 0x3154504b43535249ull;  // "IRSCKPT1"

struct Checkpoint {
  std::string kind;  // "policy" or "estimator"
  GnnConfig config;
  uint64_t system_hash = 0;
  uint64_t plan_hash = 0;
  uint64_t training_hash = 0;
  double best_validation = 0.0;
  int epoch = 0;
  PolicyParams policy;   // populated when kind == "policy"
  EstParams estimator;   // populated when kind == "estimator"
};

namespace detail {

template <class Params, class Visit>
void write_tensors(BinaryWriter& w, Params& p, Visit&& visit) {
  uint32_t count = 0;
  visit(p, [&](const std::string&, MatR&) { ++count; });
  w.u32(count);
  visit(p, [&](const std::string& name, MatR& m) {
    w.str(name);
    w.matr(m);
  });
}

template <class Params, class Visit>
void read_tensors(BinaryReader& r, Params& p, Visit&& visit) {
  const uint32_t stored = r.u32();
  uint32_t expected = 0;
  visit(p, [&](const std::string&, MatR&) { ++expected; });
  if (stored != expected) throw ConfigError("checkpoint tensor count does not match the config");
  visit(p, [&](const std::string& name, MatR& m) {
    const std::string got = r.str();
    if (got != name) throw ConfigError("checkpoint tensor order mismatch: expected " + name +
                                       ", found " + got);
    MatR loaded = r.matr();
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
      throw ConfigError("checkpoint tensor shape mismatch for " + name);
    m = std::move(loaded);
  });
}

inline void write_gnn_config(BinaryWriter& w, const GnnConfig& cfg) {
  w.i64(cfg.bs_antennas);
  w.i64(cfg.irs_elements);
  w.i64(cfg.subframes);
  w.i64(cfg.depth);
  w.i64(cfg.embed_dim);
  w.i64(cfg.hidden_init);
  w.i64(cfg.hidden_update);
  w.i64(cfg.use_locations ? 1 : 0);
  w.i64(cfg.utility == Utility::sum ? 0 : 1);
  w.f64(cfg.downlink_power_mw);
  w.f64(cfg.downlink_noise_mw);
}

inline GnnConfig read_gnn_config(BinaryReader& r) {
  GnnConfig cfg;
  cfg.bs_antennas = static_cast<int>(r.i64());
  cfg.irs_elements = static_cast<int>(r.i64());
  cfg.subframes = static_cast<int>(r.i64());
  cfg.depth = static_cast<int>(r.i64());
  cfg.embed_dim = static_cast<int>(r.i64());
  cfg.hidden_init = static_cast<int>(r.i64());
  cfg.hidden_update = static_cast<int>(r.i64());
  cfg.use_locations = r.i64() != 0;
  cfg.utility = r.i64() == 0 ? Utility::sum : Utility::min;
  cfg.downlink_power_mw = r.f64();
  cfg.downlink_noise_mw = r.f64();
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (ckpt.kind != "policy" && ckpt.kind != "estimator")
    throw ConfigError("checkpoint kind must be policy or estimator");
  BinaryWriter w;
  w.u64(kCheckpointMagic);
  w.str(ckpt.kind);
  detail::write_gnn_config(w, ckpt.config);
  w.u64(ckpt.system_hash);
  w.u64(ckpt.plan_hash);
  w.u64(ckpt.training_hash);
  w.f64(ckpt.best_validation);
  w.i64(ckpt.epoch);
  if (ckpt.kind == "policy") {
    w.f64(ckpt.policy.input_scale_pilots);
    w.f64(ckpt.policy.input_scale_locations);
    auto& p = const_cast<PolicyParams&>(ckpt.policy);
    detail::write_tensors(w, p, [](PolicyParams& q, auto&& f) { visit_policy(q, f); });
  } else {
    w.f64(ckpt.estimator.input_scale_pilots);
    w.f64(ckpt.estimator.input_scale_locations);
    w.f64(ckpt.estimator.out_scale_direct);
    w.f64(ckpt.estimator.out_scale_cascade);
    auto& p = const_cast<EstParams&>(ckpt.estimator);
    detail::write_tensors(w, p, [](EstParams& q, auto&& f) { visit_estimator(q, f); });
  }
  atomic_write_file(path, w.buffer());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  BinaryReader r(read_file_bytes(path));
  if (r.u64() != kCheckpointMagic) throw ConfigError("not a checkpoint file: " + path);
  Checkpoint ckpt;
  ckpt.kind = r.str();
  if (ckpt.kind != "policy" && ckpt.kind != "estimator")
    throw ConfigError("checkpoint carries an unknown kind: " + ckpt.kind);
  ckpt.config = detail::read_gnn_config(r);
  ckpt.system_hash = r.u64();
  ckpt.plan_hash = r.u64();
  ckpt.training_hash = r.u64();
  ckpt.best_validation = r.f64();
  ckpt.epoch = static_cast<int>(r.i64());
  if (ckpt.kind == "policy") {
    ckpt.policy = init_policy(ckpt.config, 0);
    ckpt.policy.input_scale_pilots = r.f64();
    ckpt.policy.input_scale_locations = r.f64();
    detail::read_tensors(r, ckpt.policy, [](PolicyParams& q, auto&& f) { visit_policy(q, f); });
  } else {
    ckpt.estimator = init_estimator(ckpt.config, 0);
    ckpt.estimator.input_scale_pilots = r.f64();
    ckpt.estimator.input_scale_locations = r.f64();
    ckpt.estimator.out_scale_direct = r.f64();
    ckpt.estimator.out_scale_cascade = r.f64();
    detail::read_tensors(r, ckpt.estimator,
                         [](EstParams& q, auto&& f) { visit_estimator(q, f); });
  }
  if (!r.at_end()) throw ConfigError("checkpoint file has trailing bytes");
  return ckpt;
}

// ---- training loops

struct EpochRecord {
  int epoch = 0;
  int64_t iteration = 0;  // global iteration count at the epoch boundary
  double lr = 0.0;
  double train_loss = 0.0;
  double validation_metric = 0.0;  // mean utility (policy) or MSE (estimator)
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_validation = 0.0;
  bool stopped_early = false;
};

inline void write_training_log(const std::string& path, const std::vector<EpochRecord>& history) {
  std::string text = "# irsnet training log v1\n";
  text += "epoch,iteration,lr,train_loss,validation_metric,seconds\n";
  for (const EpochRecord& r : history) {
    text += std::to_string(r.epoch) + "," + std::to_string(r.iteration) + "," +
            format_double(r.lr) + "," + format_double(r.train_loss) + "," +
            format_double(r.validation_metric) + "," + format_double(r.seconds) + "\n";
  }
  atomic_write_file(path, std::vector<char>(text.begin(), text.end()));
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string checkpoint_file(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

inline double mean_validation_utility(const GnnConfig& cfg, const PolicyParams& params,
                                      const std::vector<PolicyBatch>& chunks) {
  double total = 0.0;
  int count = 0;
  for (const PolicyBatch& chunk : chunks) {
    PolicyCache cache;
    const PolicyEval ev = policy_loss(cfg, params, chunk, cache);
    for (double u : ev.utilities) total += u;
    count += chunk.batch;
  }
  return total / count;
}

inline double validation_mse(const GnnConfig& cfg, const EstParams& params,
                             const std::vector<PolicyBatch>& chunks) {
  double total = 0.0;
  Eigen::Index count = 0;
  for (const PolicyBatch& chunk : chunks) {
    EstCache cache;
    const double mse = est_loss(cfg, params, chunk, cache);
    total += mse * static_cast<double>(chunk.batch) * chunk.users;
    count += static_cast<Eigen::Index>(chunk.batch) * chunk.users;
  }
  return total / static_cast<double>(count);
}

}  // namespace detail

// Unsupervised policy training: minimize mean negative utility on fresh
// batches, track mean utility on a fixed validation set, keep the best
// parameters, stop after `patience` epochs without improvement. A non-finite
// loss aborts by exception rather than skipping the batch.
inline TrainResult train_policy(const SystemConfig& sys, const PilotPlan& plan,
                                const GnnConfig& cfg, const TrainingConfig& tc,
                                const PolicyParams* warm_start = nullptr) {
  sys.validate();
  cfg.validate();
  tc.validate();
  require_consistent(sys, plan, cfg);

  PolicyParams params = warm_start ? *warm_start : init_policy(cfg, tc.seed);
  if (!warm_start) {
    const PolicyBatch cal =
        generate_batch(sys, plan, cfg, tc.seed, kCalibrationStream, tc.calibration_size);
    fit_input_scales(cfg, cal.features, params.input_scale_pilots,
                     params.input_scale_locations);
  }
  const std::vector<PolicyBatch> validation =
      chunked_batches(sys, plan, cfg, tc.seed, kValidationStream, tc.validation_size);

  const auto tensors = collect_params(params);
  AdamState adam;
  adam_init(adam, tensors);
  PolicyParams grads = zeros_like(params);
  const auto grad_ptrs = collect_params_const(grads);

  TrainResult result;
  result.best_validation = -std::numeric_limits<double>::infinity();
  Checkpoint best;
  best.kind = "policy";
  best.config = cfg;
  best.system_hash = sys.hash();
  best.plan_hash = plan.hash();
  best.training_hash = tc.hash();

  int64_t it = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (int i = 0; i < tc.iterations_per_epoch; ++i) {
      ++it;
      const uint64_t first =
          kTrainingStream + static_cast<uint64_t>(it - 1) * static_cast<uint64_t>(tc.batch_size);
      const PolicyBatch batch = generate_batch(sys, plan, cfg, tc.seed, first, tc.batch_size);
      zero_params(grads);
      PolicyCache cache;
      PolicyEval ev;
      try {
        ev = policy_gradient(cfg, params, batch, grads, cache);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (training iteration " + std::to_string(it) +
                           ")");
      }
      loss_sum += ev.loss;
      adam_step(adam, tensors, grad_ptrs, lr_at(tc, it));
    }
    const double val_util = detail::mean_validation_utility(cfg, params, validation);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iteration = it;
    rec.lr = lr_at(tc, it);
    rec.train_loss = loss_sum / tc.iterations_per_epoch;
    rec.validation_metric = val_util;
    rec.seconds = detail::seconds_since(t0);
    result.history.push_back(rec);
    if (!tc.log_path.empty()) write_training_log(tc.log_path, result.history);

    Checkpoint snap = best;
    snap.policy = params;
    snap.best_validation = val_util;
    snap.epoch = epoch;
    if (!tc.checkpoint_dir.empty())
      save_checkpoint(detail::checkpoint_file(tc.checkpoint_dir, "last.ckpt"), snap);

    if (val_util > result.best_validation) {
      result.best_validation = val_util;
      result.best_epoch = epoch;
      since_best = 0;
      best = std::move(snap);
      if (!tc.checkpoint_dir.empty())
        save_checkpoint(detail::checkpoint_file(tc.checkpoint_dir, "best.ckpt"), best);
    } else if (++since_best >= tc.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.checkpoint = std::move(best);
  return result;
}

// Supervised estimator training: minimize the mean squared error between the
// predicted and true combined channels; lower validation MSE is better.
inline TrainResult train_estimator(const SystemConfig& sys, const PilotPlan& plan,
                                   const GnnConfig& cfg, const TrainingConfig& tc,
                                   const EstParams* warm_start = nullptr) {
  sys.validate();
  cfg.validate();
  tc.validate();
  require_consistent(sys, plan, cfg);

  EstParams params = warm_start ? *warm_start : init_estimator(cfg, tc.seed);
  const PolicyBatch cal =
      generate_batch(sys, plan, cfg, tc.seed, kCalibrationStream, tc.calibration_size);
  if (!warm_start) {
    fit_input_scales(cfg, cal.features, params.input_scale_pilots,
                     params.input_scale_locations);
    fit_output_scales(cal.channels, params);
  }
  // The loss is reported in channel units, whose squared magnitudes sit many
  // orders below Adam's epsilon; stepping on raw gradients would stall. The
  // gradient is therefore preconditioned by the calibration-set channel power
  // (a constant, so the optimum is unchanged).
  double channel_power = 0.0;
  for (const ChannelSet& cs : cal.channels)
    for (int k = 0; k < cal.users; ++k) channel_power += cs.combined(k).squaredNorm();
  channel_power /= static_cast<double>(cal.batch) * cal.users;
  const double precondition = channel_power > 0.0 ? 1.0 / channel_power : 1.0;
  const std::vector<PolicyBatch> validation =
      chunked_batches(sys, plan, cfg, tc.seed, kValidationStream, tc.validation_size);

  const auto tensors = collect_params(params);
  AdamState adam;
  adam_init(adam, tensors);
  EstParams grads = zeros_like(params);
  const auto grad_mut = collect_params(grads);
  const auto grad_ptrs = collect_params_const(grads);

  TrainResult result;
  result.best_validation = std::numeric_limits<double>::infinity();
  Checkpoint best;
  best.kind = "estimator";
  best.config = cfg;
  best.system_hash = sys.hash();
  best.plan_hash = plan.hash();
  best.training_hash = tc.hash();

  int64_t it = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (int i = 0; i < tc.iterations_per_epoch; ++i) {
      ++it;
      const uint64_t first =
          kTrainingStream + static_cast<uint64_t>(it - 1) * static_cast<uint64_t>(tc.batch_size);
      const PolicyBatch batch = generate_batch(sys, plan, cfg, tc.seed, first, tc.batch_size);
      zero_params(grads);
      EstCache cache;
      double loss = 0.0;
      try {
        loss = est_gradient(cfg, params, batch, grads, cache);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (training iteration " + std::to_string(it) +
                           ")");
      }
      loss_sum += loss;
      for (MatR* g : grad_mut) *g *= precondition;
      adam_step(adam, tensors, grad_ptrs, lr_at(tc, it));
    }
    const double val_mse = detail::validation_mse(cfg, params, validation);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.iteration = it;
    rec.lr = lr_at(tc, it);
    rec.train_loss = loss_sum / tc.iterations_per_epoch;
    rec.validation_metric = val_mse;
    rec.seconds = detail::seconds_since(t0);
    result.history.push_back(rec);
    if (!tc.log_path.empty()) write_training_log(tc.log_path, result.history);

    Checkpoint snap = best;
    snap.estimator = params;
    snap.best_validation = val_mse;
    snap.epoch = epoch;
    if (!tc.checkpoint_dir.empty())
      save_checkpoint(detail::checkpoint_file(tc.checkpoint_dir, "last.ckpt"), snap);

    if (val_mse < result.best_validation) {
      result.best_validation = val_mse;
      result.best_epoch = epoch;
      since_best = 0;
      best = std::move(snap);
      if (!tc.checkpoint_dir.empty())
        save_checkpoint(detail::checkpoint_file(tc.checkpoint_dir, "best.ckpt"), best);
    } else if (++since_best >= tc.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.checkpoint = std::move(best);
  return result;
}

// ---- evaluation

struct Evaluation {
  double mean_utility = 0.0;
  std::vector<double> utilities;  // one entry per realization
  MatR rates;                     // realizations x users
};

// A checkpoint is tied to the pipeline that produced it. Strict evaluation
// demands identical system and plan hashes; `allow_system_mismatch` relaxes
// that to structural compatibility so one model can be scored across user
// counts it was not trained at.
inline Evaluation evaluate_policy(const SystemConfig& sys, const PilotPlan& plan,
                                  const Checkpoint& ckpt, int realizations, uint64_t seed,
                                  bool allow_system_mismatch = false) {
  if (ckpt.kind != "policy") throw ConfigError("evaluate_policy needs a policy checkpoint");
  if (realizations < 1) throw ConfigError("evaluation needs at least one realization");
  require_consistent(sys, plan, ckpt.config);
  if (!allow_system_mismatch &&
      (ckpt.system_hash != sys.hash() || ckpt.plan_hash != plan.hash()))
    throw ConfigError("checkpoint was trained against a different system or pilot plan");

  Evaluation out;
  out.utilities.reserve(realizations);
  out.rates.resize(realizations, sys.users);
  double total = 0.0;
  for (int start = 0; start < realizations; start += kForwardChunk) {
    const int count = std::min(kForwardChunk, realizations - start);
    const PolicyBatch batch = generate_batch(sys, plan, ckpt.config, seed,
                                             kEvalStream + static_cast<uint64_t>(start), count);
    PolicyCache cache;
    const PolicyEval ev = policy_loss(ckpt.config, ckpt.policy, batch, cache);
    for (int b = 0; b < count; ++b) {
      out.utilities.push_back(ev.utilities[b]);
      out.rates.row(start + b) = ev.rates.row(b);
      total += ev.utilities[b];
    }
  }
  out.mean_utility = total / realizations;
  return out;
}

}  // namespace irsnet
