// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "normprop/activation.hpp"
#include "normprop/errors.hpp"

using namespace normprop;

namespace {
constexpr double kPi = 3.14159265358979323846;
// frozen analytic values
constexpr double kC2 = 0.3989422804014327;       // 1/sqrt(2 pi)
constexpr double kC1Sq = 0.34084505690810463;    // (1 - 1/pi)/2
constexpr double kC1 = 0.5838193701035489;
constexpr double kJfRelu = 1.2111738962363168;   // sqrt(0.5)/c1

double rel_err(double a, double b) { return std::fabs(a - b) / std::fabs(b); }
}  // namespace

TEST_CASE("relu stats are the rectified-Gaussian constants") {
  const ActivationStats s = relu_stats();
  CHECK(rel_err(s.c2, kC2) <= 1e-15);
  CHECK(rel_err(double(s.c1) * double(s.c1), kC1Sq) <= 1e-15);
  CHECK(s.source == ActivationStats::Source::analytic);
  CHECK(s.sample_count == 0);
  // consistency with the half-normal route: E[max(0,X)] = E[|X|]/2
  CHECK(double(s.c2) == doctest::Approx(0.5 * std::sqrt(2.0 / kPi)).epsilon(1e-15));
}

TEST_CASE("relu stats agree with a 10^7-sample Monte Carlo run") {
  const std::size_t n = 10000000;
  const McMoments m = monte_carlo_moments(Activation::relu(), n, 11);
  const double se_mean = kC1 / std::sqrt(double(n));
  CHECK(std::fabs(m.mean - kC2) < 3 * se_mean);
  const double se_var = std::sqrt((m.m4 - m.variance * m.variance) / double(n));
  CHECK(std::fabs(m.variance - kC1Sq) < 3 * se_var);
}

TEST_CASE("prelu stats: closed form, exact reductions") {
  // a = 0 is relu, bit for bit
  const ActivationStats r = relu_stats();
  const ActivationStats p0 = prelu_stats(0);
  CHECK(p0.c1 == r.c1);
  CHECK(p0.c2 == r.c2);

  // a = 1 is the identity: preserves N(0,1) exactly
  const ActivationStats p1 = prelu_stats(1);
  CHECK(p1.c2 == 0);
  CHECK(p1.c1 == 1);

  // a = 0.25 against the frozen formula values
  const ActivationStats p = prelu_stats(0.25);
  CHECK(double(p.c2) == doctest::Approx(0.29920671030107454).epsilon(1e-15));
  CHECK(double(p.c1) * double(p.c1) == doctest::Approx(0.44172534451080886).epsilon(1e-14));
}

TEST_CASE("prelu stats confirmed by Monte Carlo at a = 0.25") {
  const std::size_t n = 10000000;
  const ActivationStats p = prelu_stats(0.25);
  const McMoments m = monte_carlo_moments(Activation::prelu(0.25), n, 13);
  CHECK(std::fabs(m.mean - double(p.c2)) < 3 * double(p.c1) / std::sqrt(double(n)));
  const double se_var = std::sqrt((m.m4 - m.variance * m.variance) / double(n));
  CHECK(std::fabs(m.variance - double(p.c1) * double(p.c1)) < 3 * se_var);
}

TEST_CASE("prelu stats are continuous in the slope") {
  for (double a : {-0.7, -0.1, 0.0, 0.3, 0.9}) {
    const ActivationStats lo = prelu_stats(static_cast<real>(a));
    const ActivationStats hi = prelu_stats(static_cast<real>(a + 1e-7));
    CHECK(std::fabs(double(lo.c1 - hi.c1)) < 1e-6);
    CHECK(std::fabs(double(lo.c2 - hi.c2)) < 1e-6);
  }
}

TEST_CASE("monte carlo stats: identity and tanh sanity") {
  const ActivationStats id = monte_carlo_stats(Activation::identity(), 1000000, 17);
  CHECK(std::fabs(double(id.c2)) < 3e-3);
  CHECK(std::fabs(double(id.c1) - 1.0) < 3e-3);
  CHECK(id.source == ActivationStats::Source::monte_carlo);
  CHECK(id.sample_count == 1000000);

  // odd function of a symmetric input: mean 0
  const ActivationStats th = monte_carlo_stats(Activation::tanh_act(), 1000000, 19);
  CHECK(std::fabs(double(th.c2)) < 3e-3);
}

TEST_CASE("monte carlo error shrinks like 1/sqrt(n)") {
  for (const std::size_t n : {10000ul, 100000ul, 1000000ul}) {
    const ActivationStats s = monte_carlo_stats(Activation::relu(), n, 23);
    const double se = kC1 / std::sqrt(double(n));
    CHECK(std::fabs(double(s.c2) - kC2) < 5 * se);
  }
}

TEST_CASE("monte carlo stats are deterministic and thread-count independent") {
  const ActivationStats a = monte_carlo_stats(Activation::relu(), 100000, 29);
  const ActivationStats b = monte_carlo_stats(Activation::relu(), 100000, 29);
  CHECK(a.c1 == b.c1);
  CHECK(a.c2 == b.c2);
}

TEST_CASE("monte carlo preconditions and error reporting") {
  CHECK_THROWS_AS(monte_carlo_stats(Activation::relu(), 9999, 1), ConfigError);
  const Activation blowup = Activation::custom(
      [](real x) { return x > 2 ? std::numeric_limits<real>::infinity() : x; });
  try {
    monte_carlo_stats(blowup, 100000, 31);
    FAIL("expected EvalError");
  } catch (const EvalError& e) {
    CHECK(std::string(e.what()).find("input") != std::string::npos);
  }
}

TEST_CASE("jacobian factor: analytic values") {
  CHECK(double(jacobian_factor(Activation::relu(), relu_stats(), 10000, 1)) ==
        doctest::Approx(kJfRelu).epsilon(1e-14));
  CHECK(double(jacobian_factor(Activation::identity(), identity_stats(), 10000, 1)) ==
        doctest::Approx(1.0).epsilon(1e-15));
  // three significant figures: 1.21
  CHECK(std::fabs(jacobian_factor(Activation::relu(), relu_stats(), 10000, 1) - 1.21) < 0.005);
}

TEST_CASE("jacobian factor: prelu analytic matches Monte Carlo") {
  const ActivationStats s = prelu_stats(0.5);
  const double analytic = std::sqrt((1 + 0.25) / 2) / double(s.c1);
  CHECK(double(jacobian_factor(Activation::prelu(0.5), s, 10000, 1)) ==
        doctest::Approx(analytic).epsilon(1e-14));
  const double mc = jacobian_factor_mc(Activation::prelu(0.5), s, 1000000, 37);
  CHECK(std::fabs(mc - analytic) < 3e-3);
}

TEST_CASE("activation derivative convention: right-derivative at kinks") {
  CHECK(Activation::relu().deriv(0) == 1);
  CHECK(Activation::prelu(0.25).deriv(0) == 1);
  CHECK(Activation::prelu(0.25).deriv(-1) == real(0.25));
  CHECK(Activation::prelu(7).slope == 7);
  CHECK_THROWS_AS(Activation::prelu(std::numeric_limits<real>::quiet_NaN()), ConfigError);
}
