// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_RNG_HPP
#define NORMPROP_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace normprop {

/// Seeded generator with hand-rolled uniform/normal/shuffle transforms so a
/// given seed produces the same stream on every platform and standard
/// library. Box-Muller for normals (one value cached), rejection sampling for
/// bounded integers, Fisher-Yates for shuffles.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  /// Uniform in [0,1).
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal.
  double normal();

  /// Uniform integer in [0, bound), bound > 0.
  std::size_t index(std::size_t bound);

  void shuffle(std::vector<std::size_t>& v);

  /// Independent substream for a fixed stream id. Derivation mixes the
  /// original seed, not the current state, so shard layouts do not depend on
  /// how much of the parent stream was consumed before the call.
  Rng derive(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 gen_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// splitmix64 finalizer, used to expand user seeds and derive shard seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace normprop

#endif
