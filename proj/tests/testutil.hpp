// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_TESTUTIL_HPP
#define NORMPROP_TESTUTIL_HPP

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "normprop/analysis.hpp"
#include "normprop/layers.hpp"
#include "normprop/rng.hpp"
#include "normprop/tensor.hpp"

namespace testutil {

using normprop::real;
using normprop::Rng;
using normprop::Tensor;

inline Tensor random_normal(const std::vector<std::size_t>& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<real>(scale * rng.normal());
  return t;
}

inline void normalize_rows(Tensor& w) {
  const std::size_t m = w.dim(0), row = w.size() / m;
  for (std::size_t i = 0; i < m; ++i) {
    real ss = 0;
    for (std::size_t j = 0; j < row; ++j) ss += w[i * row + j] * w[i * row + j];
    const real norm = std::sqrt(ss);
    for (std::size_t j = 0; j < row; ++j) w[i * row + j] /= norm;
  }
}

/// Random unit-norm rows with coherence below the target: a random
/// orthonormal basis plus a shrinking Gaussian perturbation.
inline Tensor low_coherence_rows(std::size_t m, std::size_t n, double coherence_max, Rng& rng) {
  const Tensor q = normprop::random_orthonormal_rows(m, n, rng);
  double eps = 0.3;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Tensor w = q;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += static_cast<real>(eps * rng.normal());
    normalize_rows(w);
    if (normprop::coherence(w) < coherence_max) return w;
    eps *= 0.5;
  }
  return q;  // coherence ~0
}

/// Central-difference gradient check of a layer. The scalar objective is
/// sum(R (.) forward(x)) for a fixed random weighting R; analytic gradients
/// come from backward(R). Relative error uses max(|a|,|n|,1e-2) in the
/// denominator so noise on near-zero entries is judged on an absolute scale.
struct GradCheck {
  double max_rel = 0;
  std::string worst;
};

inline GradCheck check_layer_gradients(normprop::Layer& layer, Tensor x, Rng& rng,
                                       double h = 1e-5) {
  using normprop::Mode;
  Tensor out = layer.forward(x, Mode::train);
  Tensor weighting = random_normal(out.shape(), rng);
  const Tensor grad_in = layer.backward(weighting);

  auto objective = [&](const Tensor& input) {
    Tensor o = layer.forward(input, Mode::train);
    double acc = 0;
    for (std::size_t i = 0; i < o.size(); ++i) acc += double(weighting[i]) * double(o[i]);
    return acc;
  };

  GradCheck result;
  auto record = [&](double analytic, double numeric, const std::string& where) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-2});
    const double rel = std::fabs(analytic - numeric) / denom;
    if (rel > result.max_rel) {
      result.max_rel = rel;
      result.worst = where;
    }
  };

  // input gradient
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real keep = x[i];
    x[i] = keep + static_cast<real>(h);
    const double up = objective(x);
    x[i] = keep - static_cast<real>(h);
    const double dn = objective(x);
    x[i] = keep;
    record(double(grad_in[i]), (up - dn) / (2 * h), "x[" + std::to_string(i) + "]");
  }

  // parameter gradients: grads were computed once; FD perturbs and re-runs
  // the forward objective
  for (const normprop::ParamRef& p : layer.params()) {
    const Tensor analytic = *p.grad;
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      const real keep = (*p.value)[i];
      (*p.value)[i] = keep + static_cast<real>(h);
      const double up = objective(x);
      (*p.value)[i] = keep - static_cast<real>(h);
      const double dn = objective(x);
      (*p.value)[i] = keep;
      record(double(analytic[i]), (up - dn) / (2 * h), p.name + "[" + std::to_string(i) + "]");
    }
  }
  // restore the cache for the unperturbed point
  layer.forward(x, Mode::train);
  return result;
}

/// Smallest |pre-activation| of a tensor; instances whose margin is below
/// ~1e-3 sit too close to a ReLU kink for finite differences at h=1e-5.
inline double min_abs(const Tensor& t) {
  double m = 1e300;
  for (std::size_t i = 0; i < t.size(); ++i) m = std::min(m, std::fabs(double(t[i])));
  return m;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("normprop_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace testutil

#endif
