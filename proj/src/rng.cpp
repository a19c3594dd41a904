// SPDX-License-Identifier: Apache-2.0
#include "normprop/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "normprop/errors.hpp"

namespace normprop {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), gen_(mix64(seed)) {}

std::uint64_t Rng::next() { return gen_(); }

double Rng::uniform() {
  // 53 random bits -> [0,1)
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 in (0,1] so log is finite.
  double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t bound) {
  if (bound == 0) throw ConfigError("Rng::index bound must be positive");
  const std::uint64_t b = bound;
  const std::uint64_t threshold = (0 - b) % b;  // 2^64 mod b
  for (;;) {
    std::uint64_t r = next();
    if (r >= threshold) return static_cast<std::size_t>(r % b);
  }
}

void Rng::shuffle(std::vector<std::size_t>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = index(i);
    std::swap(v[i - 1], v[j]);
  }
}

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream + 0x517cc1b727220a95ULL)));
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << (has_cached_ ? 1 : 0) << ' ';
  // Exact double as bits so restore is bit-faithful.
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(cached_));
  std::memcpy(&bits, &cached_, sizeof(bits));
  os << bits << ' ' << gen_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::uint64_t seed = 0, bits = 0;
  int has_cached = 0;
  is >> seed >> has_cached >> bits;
  Rng rng(seed);
  is >> rng.gen_;
  if (!is) throw FormatError("corrupt rng state string");
  rng.has_cached_ = has_cached != 0;
  std::memcpy(&rng.cached_, &bits, sizeof(bits));
  return rng;
}

}  // namespace normprop
