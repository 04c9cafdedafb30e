#pragma once

#include <algorithm>

#include "irsnet/common.hpp"

namespace irsnet {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline double distance(const Vec3& a, const Vec3& b) {
  double dx = b.x - a.x, dy = b.y - a.y, dz = b.z - a.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Azimuth/elevation of the unit vector pointing from `from` to `to`:
// azimuth = atan2(dy, dx), elevation = asin(dz/d). The direction vector
// reconstructs as (cos el cos az, cos el sin az, sin el).
struct Angles {
  double azimuth = 0.0;
  double elevation = 0.0;
};

inline Angles angles_between(const Vec3& from, const Vec3& to) {
  double dx = to.x - from.x, dy = to.y - from.y, dz = to.z - from.z;
  double d = std::sqrt(dx * dx + dy * dy + dz * dz);
  if (!(d > 0.0)) throw ConfigError("angles_between requires distinct endpoints");
  return {std::atan2(dy, dx), std::asin(std::clamp(dz / d, -1.0, 1.0))};
}

// Distance-based losses in dB. Direct links see a steeper exponent than
// links terminating at the reflecting surface.
inline double pathloss_direct_db(double d) {
  if (!(d > 0.0)) throw ConfigError("pathloss requires a positive distance");
  return 32.6 + 36.7 * std::log10(d);
}

inline double pathloss_reflected_db(double d) {
  if (!(d > 0.0)) throw ConfigError("pathloss requires a positive distance");
  return 30.0 + 22.0 * std::log10(d);
}

// Amplitude scale applied to unit-variance fading terms.
inline double amplitude_gain(double pathloss_db) { return std::pow(10.0, -pathloss_db / 20.0); }

}  // namespace irsnet
