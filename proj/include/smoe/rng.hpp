#pragma once

#include <cstdint>
#include <random>

namespace smoe {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

/// Child stream seed for a replicate: seed XOR mix64(index).
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index);

/// Seeded random source with platform-independent output.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard distributions are not, so uniforms are built from
/// the top 53 bits and normals use the Marsaglia polar method (pairs are
/// cached, so a draw sequence is fully determined by the seed).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace smoe
