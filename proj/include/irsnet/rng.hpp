#pragma once

#include <random>

#include "irsnet/common.hpp"

namespace irsnet {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Child seed for a named stream; distinct (seed, stream) pairs give decorrelated streams.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed ^ 0x7c0f0ab1c2e3f4d5ull) + splitmix64(stream));
}

// Seeded generator with an explicit draw order. Gaussian variates use Box-Muller
// with no cached spare, so the consumed-uniform count per call is fixed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  static Rng substream(uint64_t seed, uint64_t stream) { return Rng(derive_seed(seed, stream)); }

  uint64_t next_u64() { return gen_(); }

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }  // [0, 1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // CN(0, 1): real and imaginary parts are independent N(0, 1/2).
  cd cnormal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-std::log(u1));
    return cd(r * std::cos(2.0 * kPi * u2), r * std::sin(2.0 * kPi * u2));
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace irsnet
