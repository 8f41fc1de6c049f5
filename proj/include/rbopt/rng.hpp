#pragma once

#include <cmath>
#include <cstdint>

namespace rbopt {

// Counter-based generator: every value is a pure function of (seed, k1, k2, k3).
// No global state, so assembly stays reproducible regardless of evaluation order.
namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

struct CounterRng {
  uint64_t seed = 0;

  uint64_t bits(uint64_t k1, uint64_t k2 = 0, uint64_t k3 = 0) const {
    uint64_t h = detail::splitmix64(seed ^ 0x243f6a8885a308d3ULL);
    h = detail::splitmix64(h ^ k1);
    h = detail::splitmix64(h ^ k2);
    h = detail::splitmix64(h ^ k3);
    return h;
  }

  /// Uniform in [0, 1).
  double uniform01(uint64_t k1, uint64_t k2 = 0, uint64_t k3 = 0) const {
    return static_cast<double>(bits(k1, k2, k3) >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi, uint64_t k1, uint64_t k2 = 0, uint64_t k3 = 0) const {
    return lo + (hi - lo) * uniform01(k1, k2, k3);
  }

  /// Normal with mean (lo+hi)/2 and sigma (hi-lo)/4, truncated to [lo, hi].
  double truncated_normal(double lo, double hi, uint64_t k1, uint64_t k2 = 0,
                          uint64_t k3 = 0) const {
    const double mean = 0.5 * (lo + hi);
    const double sigma = 0.25 * (hi - lo);
    double u1 = uniform01(k1, k2, 2 * k3);
    double u2 = uniform01(k1, k2, 2 * k3 + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    double value = mean + sigma * z;
    if (value < lo) value = lo;
    if (value > hi) value = hi;
    return value;
  }
};

}  // namespace rbopt
