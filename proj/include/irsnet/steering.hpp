#pragma once

#include "irsnet/geometry.hpp"

namespace irsnet {

// Half-wavelength uniform rectangular array in the y-z plane, row-major
// element order: element n sits at column n % cols (y axis) and row
// n / cols (z axis).
inline VecC steering_ura(int rows, int cols, double azimuth, double elevation) {
  if (rows < 1 || cols < 1) throw ConfigError("steering_ura requires positive grid dimensions");
  double u = std::sin(azimuth) * std::cos(elevation);
  double w = std::sin(elevation);
  VecC a(static_cast<Eigen::Index>(rows) * cols);
  for (int n = 0; n < rows * cols; ++n) {
    double phase = kPi * ((n % cols) * u + (n / cols) * w);
    a(n) = std::polar(1.0, phase);
  }
  return a;
}

// Half-wavelength uniform linear array along the x axis.
inline VecC steering_ula(int antennas, double azimuth, double elevation) {
  if (antennas < 1) throw ConfigError("steering_ula requires at least one antenna");
  double u = std::cos(azimuth) * std::cos(elevation);
  VecC a(antennas);
  for (int m = 0; m < antennas; ++m) a(m) = std::polar(1.0, kPi * m * u);
  return a;
}

// Reflected beam gain |sum_n v_n a_n(probe) conj(a_n(toward_tx))| of a phase
// configuration v, for an incident direction fixed at `toward_tx`. The
// element-n cascade term carries conj(a_n(toward_tx)) a_n(source), so the
// profile pairs with v unconjugated; a rate-optimal v then peaks at the
// source direction.
inline double reflection_response(const VecC& phases, int rows, int cols, const Angles& toward_tx,
                                  const Angles& probe) {
  if (phases.size() != static_cast<Eigen::Index>(rows) * cols)
    throw ConfigError("phase vector does not match the array grid");
  VecC combined = steering_ura(rows, cols, probe.azimuth, probe.elevation)
                      .cwiseProduct(steering_ura(rows, cols, toward_tx.azimuth, toward_tx.elevation).conjugate());
  return std::abs(combined.cwiseProduct(phases).sum());
}

// Transmit beam gain |a(probe)^T w| of one beamforming column. Downlink
// rides the transpose channel, so the profile is unconjugated here too.
inline double transmit_response(const VecC& beam, const Angles& probe) {
  VecC a = steering_ula(static_cast<int>(beam.size()), probe.azimuth, probe.elevation);
  return std::abs(a.cwiseProduct(beam).sum());
}

}  // namespace irsnet
