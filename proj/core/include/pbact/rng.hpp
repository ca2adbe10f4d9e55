#pragma once

#include <cstdint>
#include <cstddef>

namespace pbact {

/// Deterministic, platform-independent PRNG (xoshiro256++ seeded via
/// splitmix64). The standard <random> distributions are implementation
/// defined, which would break byte-stable artifacts across toolchains, so
/// every draw in the project goes through this class instead.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Unbiased uniform index in [0, n). n must be > 0.
  size_t uniform_index(size_t n);

  /// Standard normal via Box-Muller (deterministic, caches the spare value).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derive an independent stream for (this seed, stream id). Used to give
  /// each demo / run / rollout its own reproducible substream.
  static Rng fork(uint64_t seed, uint64_t stream);

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pbact
