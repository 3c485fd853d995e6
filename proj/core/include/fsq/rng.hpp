#pragma once

#include <cstdint>

namespace fsq {

/// SplitMix64 step. Used for seeding and for deriving independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a base seed with a stream index into a new, well-separated seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// xoshiro256** generator seeded through SplitMix64.
///
/// All sampling helpers are defined in terms of next() with fixed integer
/// arithmetic, so a seed reproduces the same stream on every platform. Normal
/// samples use the Box-Muller cosine branch with one sample per two uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal sample.
  double normal();

 private:
  std::uint64_t s_[4];
};

}  // namespace fsq
