#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "metagrad/core/error.hpp"

namespace metagrad {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random stream. The engine is std::mt19937_64 (bit-portable);
/// the distributions below are written out so that draws are identical on
/// every standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) {}

  /// Stream for (global seed, item index, substream id).
  static Rng derive(std::uint64_t seed, std::uint64_t index,
                    std::uint64_t stream = 0) {
    return Rng(mix64(mix64(seed) ^ mix64(index + 0x51ed270b27f6a1c3ULL) ^
                     mix64(stream + 0x2545f4914f6cdd1dULL)));
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [lo, hi] (inclusive), by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next());
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
    std::uint64_t r = next();
    while (r >= limit) r = next();
    return lo + static_cast<std::int64_t>(r % span);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace metagrad
