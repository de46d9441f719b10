#pragma once

#include <cstdint>

namespace advoverlay {

/// xoshiro256** seeded through splitmix64. Used everywhere a reproducible
/// stream is needed (weight init, synthetic scenes, mask placement), because
/// std:: distributions are not bit-stable across standard libraries.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive).
  int uniform_int(int lo, int hi);

 private:
  std::uint64_t s_[4];
};

/// Stateless mixing for deriving per-item seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace advoverlay
