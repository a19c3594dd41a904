// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_ACTIVATION_HPP
#define NORMPROP_ACTIVATION_HPP

#include <cstdint>
#include <functional>
#include <string>

#include "normprop/tensor.hpp"

namespace normprop {

/// Scalar activation. Kinks (ReLU/PReLU at 0) use the right-derivative, so
/// deriv(0) == 1 for both; this is a measure-zero convention with no effect
/// on any expectation.
struct Activation {
  enum class Kind { relu, prelu, tanh, identity, custom };

  Kind kind = Kind::relu;
  real slope = 0;  // prelu negative-side slope
  std::function<real(real)> fn;   // custom only
  std::function<real(real)> dfn;  // custom only (optional)

  static Activation relu() { return Activation{Kind::relu, 0, nullptr, nullptr}; }
  static Activation prelu(real a);
  static Activation tanh_act() { return Activation{Kind::tanh, 0, nullptr, nullptr}; }
  static Activation identity() { return Activation{Kind::identity, 0, nullptr, nullptr}; }
  static Activation custom(std::function<real(real)> f, std::function<real(real)> df = nullptr) {
    return Activation{Kind::custom, 0, std::move(f), std::move(df)};
  }

  real operator()(real x) const;
  real deriv(real x) const;

  /// True when closed-form post-activation statistics exist (relu, prelu,
  /// identity).
  bool has_analytic_stats() const;

  std::string name() const;
};

/// Post-activation statistics under a standard-normal input:
/// c2 = E[act(X)], c1 = stddev(act(X)), X ~ N(0,1). These are the constants
/// that replace batch statistics in every normalized hidden layer.
struct ActivationStats {
  real c1 = 1;  // post-activation standard deviation, > 0
  real c2 = 0;  // post-activation mean
  enum class Source { analytic, monte_carlo } source = Source::analytic;
  std::size_t sample_count = 0;  // 0 if analytic
};

/// Rectified Gaussian moments: c2 = 1/sqrt(2*pi), c1^2 = (1/2)(1 - 1/pi).
ActivationStats relu_stats();

/// PReLU(a) moments: c2 = (1-a)/sqrt(2*pi),
/// c1^2 = (1/2)((1+a^2) - (1-a)^2/pi). Reduces bit-exactly to relu_stats()
/// at a = 0 and to (c1,c2) = (1,0) at a = 1.
ActivationStats prelu_stats(real a);

ActivationStats identity_stats();

/// Analytic stats when available, otherwise Monte Carlo with the given
/// budget.
ActivationStats stats_for(const Activation& act, std::size_t mc_samples, std::uint64_t seed);

/// Detailed sample moments from the Monte Carlo estimator; m4 is the fourth
/// central moment, used to derive the standard error of the variance
/// estimate.
struct McMoments {
  double mean = 0;
  double variance = 0;  // unbiased, divisor n-1
  double m4 = 0;
  std::size_t n = 0;
};

/// Seeded Monte Carlo estimate of the post-activation moments. Samples are
/// drawn over a fixed number of sub-streams with a fixed merge order, so the
/// result depends only on (act, n, seed), never on thread count. Requires
/// n >= 10^4. A non-finite activation output raises an evaluation error
/// naming the offending input.
McMoments monte_carlo_moments(const Activation& act, std::size_t n, std::uint64_t seed);

ActivationStats monte_carlo_stats(const Activation& act, std::size_t n, std::uint64_t seed);

/// sqrt(E[act'(X)^2]) / c1 for X ~ N(0,1): the factor by which a normalized
/// layer scales gradients. Analytic for relu (E[act'^2] = 1/2, giving
/// ~1.2112), prelu ((1+a^2)/2) and identity; Monte Carlo otherwise.
real jacobian_factor(const Activation& act, const ActivationStats& stats, std::size_t n,
                     std::uint64_t seed);

/// Always-simulated variant (the stats report prints it next to the
/// analytic value).
real jacobian_factor_mc(const Activation& act, const ActivationStats& stats, std::size_t n,
                        std::uint64_t seed);

/// Literal gamma initialization constant for ReLU layers: 1/1.21.
inline constexpr double kReluGammaInit = 1.0 / 1.21;

}  // namespace normprop

#endif
