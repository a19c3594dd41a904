// SPDX-License-Identifier: Apache-2.0
#include "normprop/activation.hpp"

#include <cmath>
#include <sstream>

#include "normprop/errors.hpp"
#include "normprop/rng.hpp"

namespace normprop {

namespace {
constexpr double kPi = 3.14159265358979323846;
// Fixed sub-stream count for Monte Carlo; part of the stream contract, never
// tied to the machine's thread count.
constexpr std::size_t kMcShards = 16;
}  // namespace

Activation Activation::prelu(real a) {
  if (!std::isfinite(a)) throw ConfigError("prelu slope must be finite");
  Activation act{Kind::prelu, a, nullptr, nullptr};
  return act;
}

real Activation::operator()(real x) const {
  switch (kind) {
    case Kind::relu:
      return x > 0 ? x : real(0);
    case Kind::prelu:
      return x > 0 ? x : slope * x;
    case Kind::tanh:
      return std::tanh(x);
    case Kind::identity:
      return x;
    case Kind::custom:
      return fn(x);
  }
  return x;
}

real Activation::deriv(real x) const {
  switch (kind) {
    case Kind::relu:
      return x >= 0 ? real(1) : real(0);
    case Kind::prelu:
      return x >= 0 ? real(1) : slope;
    case Kind::tanh: {
      const real t = std::tanh(x);
      return 1 - t * t;
    }
    case Kind::identity:
      return 1;
    case Kind::custom: {
      if (dfn) return dfn(x);
      // central difference fallback for custom activations without a stated
      // derivative
      const real h = real(1e-6);
      return (fn(x + h) - fn(x - h)) / (2 * h);
    }
  }
  return 1;
}

bool Activation::has_analytic_stats() const {
  return kind == Kind::relu || kind == Kind::prelu || kind == Kind::identity;
}

std::string Activation::name() const {
  switch (kind) {
    case Kind::relu:
      return "relu";
    case Kind::prelu: {
      std::ostringstream os;
      os << "prelu(" << slope << ")";
      return os.str();
    }
    case Kind::tanh:
      return "tanh";
    case Kind::identity:
      return "identity";
    case Kind::custom:
      return "custom";
  }
  return "?";
}

ActivationStats relu_stats() {
  ActivationStats s;
  s.c2 = real(1.0 / std::sqrt(2.0 * kPi));
  s.c1 = real(std::sqrt(0.5 * (1.0 - 1.0 / kPi)));
  s.source = ActivationStats::Source::analytic;
  s.sample_count = 0;
  return s;
}

ActivationStats prelu_stats(real a) {
  if (!std::isfinite(a)) throw ConfigError("prelu slope must be finite");
  ActivationStats s;
  const double ad = a;
  s.c2 = real((1.0 - ad) / std::sqrt(2.0 * kPi));
  const double var = 0.5 * ((1.0 + ad * ad) - ((1.0 - ad) * (1.0 - ad)) / kPi);
  // var = ((1+a^2) - (1-a)^2/pi)/2 > 0 for every finite a: (1-a)^2/pi <
  // (1+a^2) since pi > 2.
  if (!(var > 0)) throw EvalError("prelu variance not positive; slope " + std::to_string(a));
  s.c1 = real(std::sqrt(var));
  s.source = ActivationStats::Source::analytic;
  s.sample_count = 0;
  return s;
}

ActivationStats identity_stats() {
  ActivationStats s;
  s.c1 = 1;
  s.c2 = 0;
  s.source = ActivationStats::Source::analytic;
  return s;
}

ActivationStats stats_for(const Activation& act, std::size_t mc_samples, std::uint64_t seed) {
  switch (act.kind) {
    case Activation::Kind::relu:
      return relu_stats();
    case Activation::Kind::prelu:
      return prelu_stats(act.slope);
    case Activation::Kind::identity:
      return identity_stats();
    default:
      return monte_carlo_stats(act, mc_samples, seed);
  }
}

McMoments monte_carlo_moments(const Activation& act, std::size_t n, std::uint64_t seed) {
  if (n < 10000) throw ConfigError("monte carlo sample count must be >= 10^4");
  const Rng base(seed);

  // Pass 1: shard sums -> mean. Shard boundaries are pure integer arithmetic
  // on (n, shard), independent of threads.
  double shard_sum[kMcShards] = {};
  double bad_input[kMcShards];
  bool bad[kMcShards] = {};
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < static_cast<std::int64_t>(kMcShards); ++s) {
    Rng rng = base.derive(static_cast<std::uint64_t>(s));
    const std::size_t lo = n * s / kMcShards, hi = n * (s + 1) / kMcShards;
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double x = rng.normal();
      const double y = act(static_cast<real>(x));
      if (!std::isfinite(y)) {
        bad[s] = true;
        bad_input[s] = x;
        break;
      }
      acc += y;
    }
    shard_sum[s] = acc;
  }
  for (std::size_t s = 0; s < kMcShards; ++s) {
    if (bad[s]) {
      std::ostringstream os;
      os << "activation produced a non-finite value at input " << bad_input[s];
      throw EvalError(os.str());
    }
  }
  double total = 0;
  for (std::size_t s = 0; s < kMcShards; ++s) total += shard_sum[s];
  const double mean = total / static_cast<double>(n);

  // Pass 2: regenerate each shard stream, accumulate central moments.
  double shard_m2[kMcShards] = {};
  double shard_m4[kMcShards] = {};
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < static_cast<std::int64_t>(kMcShards); ++s) {
    Rng rng = base.derive(static_cast<std::uint64_t>(s));
    const std::size_t lo = n * s / kMcShards, hi = n * (s + 1) / kMcShards;
    double m2 = 0, m4 = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double x = rng.normal();
      const double d = static_cast<double>(act(static_cast<real>(x))) - mean;
      const double d2 = d * d;
      m2 += d2;
      m4 += d2 * d2;
    }
    shard_m2[s] = m2;
    shard_m4[s] = m4;
  }
  double m2 = 0, m4 = 0;
  for (std::size_t s = 0; s < kMcShards; ++s) {
    m2 += shard_m2[s];
    m4 += shard_m4[s];
  }

  McMoments out;
  out.mean = mean;
  out.variance = m2 / static_cast<double>(n - 1);
  out.m4 = m4 / static_cast<double>(n);
  out.n = n;
  return out;
}

ActivationStats monte_carlo_stats(const Activation& act, std::size_t n, std::uint64_t seed) {
  const McMoments m = monte_carlo_moments(act, n, seed);
  ActivationStats s;
  s.c2 = static_cast<real>(m.mean);
  s.c1 = static_cast<real>(std::sqrt(m.variance));
  s.source = ActivationStats::Source::monte_carlo;
  s.sample_count = n;
  return s;
}

namespace {

// E[act'(X)^2] by the fixed-shard Monte Carlo scheme.
double mc_mean_deriv_sq(const Activation& act, std::size_t n, std::uint64_t seed) {
  const Rng base(seed);
  double shard_sum[kMcShards] = {};
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < static_cast<std::int64_t>(kMcShards); ++s) {
    Rng rng = base.derive(static_cast<std::uint64_t>(s));
    const std::size_t lo = n * s / kMcShards, hi = n * (s + 1) / kMcShards;
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = act.deriv(static_cast<real>(rng.normal()));
      acc += d * d;
    }
    shard_sum[s] = acc;
  }
  double total = 0;
  for (std::size_t s = 0; s < kMcShards; ++s) total += shard_sum[s];
  return total / static_cast<double>(n);
}

}  // namespace

real jacobian_factor(const Activation& act, const ActivationStats& stats, std::size_t n,
                     std::uint64_t seed) {
  if (!(stats.c1 > 0)) throw ConfigError("jacobian factor requires c1 > 0");
  double e_dsq;
  switch (act.kind) {
    case Activation::Kind::relu:
      e_dsq = 0.5;
      break;
    case Activation::Kind::prelu:
      e_dsq = 0.5 * (1.0 + static_cast<double>(act.slope) * static_cast<double>(act.slope));
      break;
    case Activation::Kind::identity:
      e_dsq = 1.0;
      break;
    default:
      e_dsq = mc_mean_deriv_sq(act, n, seed);
      break;
  }
  return static_cast<real>(std::sqrt(e_dsq) / static_cast<double>(stats.c1));
}

real jacobian_factor_mc(const Activation& act, const ActivationStats& stats, std::size_t n,
                        std::uint64_t seed) {
  if (!(stats.c1 > 0)) throw ConfigError("jacobian factor requires c1 > 0");
  return static_cast<real>(std::sqrt(mc_mean_deriv_sq(act, n, seed)) /
                           static_cast<double>(stats.c1));
}

}  // namespace normprop
