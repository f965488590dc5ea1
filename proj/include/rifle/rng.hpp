#pragma once

#include <array>
#include <cstdint>

namespace rifle {

/// Deterministic random source: xoshiro256** seeded through splitmix64.
///
/// The raw 64-bit stream is fully specified by the seed and identical on every
/// platform. Derived quantities (uniform doubles, bounded integers, Gaussians)
/// are computed here rather than through <random> distributions, whose output
/// is implementation-defined.
///
/// An Rng is single-owner. Independent streams for parallel work are obtained
/// with derive(), never by sharing one instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer on [0, bound), unbiased (Lemire's method). bound > 0.
  std::uint64_t uniform_index(std::uint64_t bound);

  /// Standard normal draw (Marsaglia polar method, second variate cached).
  double normal();

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Bernoulli(p) draw.
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream identified by `stream`. Does not advance *this.
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// One splitmix64 step; also used to mix seeds.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace rifle
