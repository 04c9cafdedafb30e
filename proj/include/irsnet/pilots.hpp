#pragma once

#include <utility>

#include "irsnet/channel.hpp"
#include "irsnet/io.hpp"

namespace irsnet {

// Uplink sounding schedule: tau sub-frames of length L0 = K symbols each.
// Within one sub-frame the reflection pattern is frozen and users transmit
// mutually orthogonal sequences; the pattern changes across sub-frames.
struct PilotPlan {
  int subframes = 1;     // tau
  int frame_length = 1;  // L0, equals the user count
  MatC pilot_rows;       // K x L0, row k is user k's transmitted sequence
  MatC training_profile; // (N+1) x tau, column t = [1; reflection pattern]
  double uplink_power_mw = 1.0;

  int total_length() const { return subframes * frame_length; }

  uint64_t hash() const {
    Hasher h;
    h.i64(subframes).i64(frame_length).f64(uplink_power_mw);
    h.matc(pilot_rows).matc(training_profile);
    return h.digest();
  }
};

// Scaled DFT rows: X(k, l) = sqrt(Pu) exp(-j 2 pi k l / K), so X X^H = L0 Pu I.
inline MatC make_pilot_matrix(int users, double power_mw) {
  if (users < 1) throw ConfigError("make_pilot_matrix requires at least one user");
  if (!(power_mw > 0.0)) throw ConfigError("uplink power must be positive");
  MatC x(users, users);
  const double amp = std::sqrt(power_mw);
  for (int k = 0; k < users; ++k)
    for (int l = 0; l < users; ++l)
      x(k, l) = std::polar(amp, -2.0 * kPi * k * l / users);
  return x;
}

// Reflection training profile. With tau >= N+1 sub-frames the columns come
// from a tau x tau DFT truncated to the first N+1 rows (orthogonal rows);
// otherwise each pattern entry gets an independent uniform phase. Row 0 is
// the all-ones direct-path row in both cases.
inline MatC make_training_profile(int irs_elements, int subframes, Rng& rng) {
  if (irs_elements < 1 || subframes < 1)
    throw ConfigError("make_training_profile requires positive dimensions");
  const int rows = irs_elements + 1;
  MatC q(rows, subframes);
  if (subframes >= rows) {
    for (int t = 0; t < subframes; ++t)
      for (int r = 0; r < rows; ++r)
        q(r, t) = std::polar(1.0, -2.0 * kPi * r * t / subframes);
  } else {
    for (int t = 0; t < subframes; ++t) {
      q(0, t) = 1.0;
      for (int r = 1; r < rows; ++r) q(r, t) = std::polar(1.0, rng.uniform(-kPi, kPi));
    }
  }
  return q;
}

inline PilotPlan make_pilot_plan(const SystemConfig& sys, int subframes, uint64_t profile_seed) {
  sys.validate();
  if (subframes < 1) throw ConfigError("pilot plan needs at least one sub-frame");
  PilotPlan plan;
  plan.subframes = subframes;
  plan.frame_length = sys.users;
  plan.uplink_power_mw = sys.uplink_power_mw();
  plan.pilot_rows = make_pilot_matrix(sys.users, plan.uplink_power_mw);
  Rng rng = Rng::substream(profile_seed, 0x51);
  plan.training_profile = make_training_profile(sys.irs_elements(), subframes, rng);
  return plan;
}

// Raw received block, M x (tau L0); sub-frame t occupies columns
// [t L0, (t+1) L0). noise_var_mw may be zero for noiseless analysis.
inline MatC simulate_uplink(const ChannelSet& cs, const PilotPlan& plan, double noise_var_mw,
                            Rng& rng) {
  const auto m = cs.bs_irs.rows();
  const int k = static_cast<int>(cs.user_bs.size());
  if (plan.frame_length != k) throw ConfigError("pilot plan frame length must equal the user count");
  if (plan.training_profile.rows() != cs.bs_irs.cols() + 1)
    throw ConfigError("training profile does not match the element count");
  if (!(noise_var_mw >= 0.0)) throw ConfigError("noise variance must be non-negative");

  const double noise_amp = std::sqrt(noise_var_mw);
  MatC y(m, plan.total_length());
  MatC during(m, k);
  for (int t = 0; t < plan.subframes; ++t) {
    VecC pattern = plan.training_profile.col(t).tail(cs.bs_irs.cols());
    for (int u = 0; u < k; ++u) during.col(u) = cs.user_bs[u] + cs.cascade[u] * pattern;
    y.middleCols(static_cast<Eigen::Index>(t) * k, k) = during * plan.pilot_rows;
    if (noise_var_mw > 0.0)
      for (int l = 0; l < k; ++l)
        for (Eigen::Index r = 0; r < m; ++r)
          y(r, static_cast<Eigen::Index>(t) * k + l) += noise_amp * rng.cnormal();
  }
  return y;
}

// Per-user decorrelated observations: Ytilde_k = F_k Q + noise, with the
// effective per-entry noise variance reduced by the matched-filter gain.
struct ReceivedPilots {
  std::vector<MatC> per_user;        // K matrices, each M x tau
  double effective_noise_var = 0.0;  // sigma1^2 / (L0 Pu)
};

inline ReceivedPilots decorrelate(const MatC& raw, const PilotPlan& plan, double noise_var_mw) {
  const int k = plan.frame_length;
  const auto m = raw.rows();
  if (raw.cols() != plan.total_length()) throw ConfigError("raw block does not match the pilot plan");
  const double scale = 1.0 / (static_cast<double>(plan.frame_length) * plan.uplink_power_mw);
  ReceivedPilots out;
  out.effective_noise_var = noise_var_mw * scale;
  out.per_user.assign(k, MatC(m, plan.subframes));
  for (int u = 0; u < k; ++u) {
    VecC matched = plan.pilot_rows.row(u).adjoint() * scale;  // conj of the transmitted row
    for (int t = 0; t < plan.subframes; ++t)
      out.per_user[u].col(t) = raw.middleCols(static_cast<Eigen::Index>(t) * k, k) * matched;
  }
  return out;
}

// Binary container for batches of decorrelated observations.
struct PilotBatchHeader {
  int bs_antennas = 0;
  int irs_elements = 0;
  int users = 0;
  int subframes = 0;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  double effective_noise_var = 0.0;
};

inline constexpr uint64_t kPilotBatchMagic = 0x31424c4950535249ull;  // "IRSPILB1"

inline void save_pilot_batch(const std::string& path, const PilotBatchHeader& header,
                             const std::vector<ReceivedPilots>& batch) {
  BinaryWriter w;
  w.u64(kPilotBatchMagic);
  w.u32(static_cast<uint32_t>(header.bs_antennas));
  w.u32(static_cast<uint32_t>(header.irs_elements));
  w.u32(static_cast<uint32_t>(header.users));
  w.u32(static_cast<uint32_t>(header.subframes));
  w.u64(header.seed);
  w.u64(header.config_hash);
  w.f64(header.effective_noise_var);
  w.u64(batch.size());
  for (const auto& sample : batch) {
    if (static_cast<int>(sample.per_user.size()) != header.users)
      throw ConfigError("pilot batch sample does not match the header user count");
    for (const auto& y : sample.per_user) {
      if (y.rows() != header.bs_antennas || y.cols() != header.subframes)
        throw ConfigError("pilot batch sample does not match the header dimensions");
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          w.f64(y(r, c).real());
          w.f64(y(r, c).imag());
        }
    }
  }
  atomic_write_file(path, w.buffer());
}

inline std::pair<PilotBatchHeader, std::vector<ReceivedPilots>> load_pilot_batch(
    const std::string& path) {
  BinaryReader r(read_file_bytes(path));
  if (r.u64() != kPilotBatchMagic) throw ConfigError("not a pilot batch container: " + path);
  PilotBatchHeader h;
  h.bs_antennas = static_cast<int>(r.u32());
  h.irs_elements = static_cast<int>(r.u32());
  h.users = static_cast<int>(r.u32());
  h.subframes = static_cast<int>(r.u32());
  h.seed = r.u64();
  h.config_hash = r.u64();
  h.effective_noise_var = r.f64();
  if (h.bs_antennas < 1 || h.users < 1 || h.subframes < 1 || h.irs_elements < 1)
    throw ConfigError("pilot batch header carries invalid dimensions");
  auto count = r.u64();
  std::vector<ReceivedPilots> batch(count);
  for (auto& sample : batch) {
    sample.effective_noise_var = h.effective_noise_var;
    sample.per_user.assign(h.users, MatC(h.bs_antennas, h.subframes));
    for (auto& y : sample.per_user)
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        for (Eigen::Index r2 = 0; r2 < y.rows(); ++r2) {
          double re = r.f64();
          double im = r.f64();
          y(r2, c) = cd(re, im);
        }
  }
  if (!r.at_end()) throw ConfigError("pilot batch container has trailing bytes");
  return {h, std::move(batch)};
}

}  // namespace irsnet
