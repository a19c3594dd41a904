// SPDX-License-Identifier: Apache-2.0
#include "normprop/analysis.hpp"

#include <cmath>

#include "normprop/eig.hpp"
#include "normprop/errors.hpp"
#include "normprop/rng.hpp"

namespace normprop {

namespace {

Tensor flat_rows(const Tensor& w) {
  if (w.rank() < 2) throw DimensionError("weight matrix must have rank >= 2");
  if (w.rank() == 2) return w;
  return w.reshaped({w.dim(0), w.size() / w.dim(0)});
}

}  // namespace

real coherence(const Tensor& w_in) {
  const Tensor w = flat_rows(w_in);
  const std::size_t m = w.dim(0);
  if (m < 2) throw ConfigError("coherence needs at least 2 rows");
  const Tensor norms = kernels::row_l2_norms(w);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(norms[i] > kNormFloor)) {
      throw NormalizationError("coherence: row " + std::to_string(i) + " has zero norm");
    }
  }
  const Tensor gram = kernels::matmul_nt(w, w);
  real mu = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const real c = std::fabs(gram(i, j)) / (norms[i] * norms[j]);
      if (c > mu) mu = c;
    }
  }
  return mu;
}

real canonical_bound(const Tensor& w_in, real sigma) {
  const Tensor w = flat_rows(w_in);
  const real mu = coherence(w);
  const Tensor norms = kernels::row_l2_norms(w);
  const std::size_t m = w.dim(0);
  real sum = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      sum += norms[i] * norms[i] * norms[j] * norms[j];
    }
  }
  return sigma * sigma * mu * std::sqrt(sum);
}

CovarianceReport canonical_gap(const Tensor& samples_u, const Tensor& w_in, real sigma,
                               bool assume_zero_mean) {
  if (samples_u.rank() != 2) {
    throw DimensionError("u-samples must be [N,m], got " + samples_u.shape_str());
  }
  const std::size_t n = samples_u.dim(0), m = samples_u.dim(1);
  if (n < 100) throw DataError("canonical gap needs at least 100 samples, got " + std::to_string(n));
  const Tensor w = flat_rows(w_in);
  if (w.dim(0) != m) {
    throw DimensionError("weights " + w_in.shape_str() + " do not match u width " +
                         std::to_string(m));
  }

  CovarianceReport rep;
  if (assume_zero_mean) {
    rep.sigma_hat = kernels::matmul_tn(samples_u, samples_u);
    for (std::size_t i = 0; i < rep.sigma_hat.size(); ++i) {
      rep.sigma_hat[i] /= static_cast<real>(n);
    }
  } else {
    Tensor centered = samples_u;
    for (std::size_t j = 0; j < m; ++j) {
      real s = 0;
      for (std::size_t i = 0; i < n; ++i) s += samples_u(i, j);
      const real mean = s / static_cast<real>(n);
      for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
    }
    rep.sigma_hat = kernels::matmul_tn(centered, centered);
    for (std::size_t i = 0; i < rep.sigma_hat.size(); ++i) {
      rep.sigma_hat[i] /= static_cast<real>(n);
    }
  }

  const Tensor norms = kernels::row_l2_norms(w);
  rep.alpha_star = Tensor({m});
  for (std::size_t i = 0; i < m; ++i) rep.alpha_star[i] = sigma * sigma * norms[i] * norms[i];

  real gap_sq = 0, gap_emp_sq = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const real diag_star = i == j ? rep.alpha_star[i] : real(0);
      const real d = rep.sigma_hat(i, j) - diag_star;
      gap_sq += d * d;
      if (i != j) gap_emp_sq += rep.sigma_hat(i, j) * rep.sigma_hat(i, j);
    }
  }
  rep.gap = std::sqrt(gap_sq);
  rep.gap_empirical = std::sqrt(gap_emp_sq);
  rep.bound = canonical_bound(w, sigma);
  rep.coherence = coherence(w);
  return rep;
}

JacobianProbe jacobian_probe(const NormPropDense& layer, const Tensor& x_samples) {
  if (x_samples.rank() != 2 || x_samples.dim(1) != layer.input_dim()) {
    throw DimensionError("probe samples " + x_samples.shape_str() + " do not match layer input " +
                         std::to_string(layer.input_dim()));
  }
  const std::size_t n = x_samples.dim(0), m = layer.units(), d = layer.input_dim();
  const Tensor& w = layer.weights();
  const Tensor norms = kernels::row_l2_norms(w);
  Tensor w_tilde({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    if (!(norms[i] > kNormFloor)) {
      throw NormalizationError("jacobian probe: row " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t j = 0; j < d; ++j) w_tilde(i, j) = w(i, j) / norms[i];
  }

  // J_i = (1/c1) * act'(z_i) * gamma_i * W~_i, so
  // (J J^T)_{ij} = f_i f_j (W~ W~^T)_{ij} with f_i = act'(z_i) gamma_i / c1.
  Tensor zt = kernels::matmul_nt(x_samples, w_tilde);  // [n,m]
  const real c1 = layer.stats().c1;
  const Activation& act = layer.activation();
  const Tensor& gamma = layer.gamma();
  const Tensor& beta = layer.beta();
  Tensor f({n, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const real z = gamma[i] * zt(b, i) + beta[i];
      f(b, i) = act.deriv(z) * gamma[i] / c1;
    }
  }
  Tensor mean_fft = kernels::matmul_tn(f, f);
  for (std::size_t i = 0; i < mean_fft.size(); ++i) mean_fft[i] /= static_cast<real>(n);
  const Tensor gram = kernels::matmul_nt(w_tilde, w_tilde);

  JacobianProbe probe;
  probe.mean_jjt = Tensor({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      probe.mean_jjt(i, j) = mean_fft(i, j) * gram(i, j);
    }
  }
  // symmetric PSD by construction; singular values are sqrt of eigenvalues
  std::vector<real> eig = symmetric_eigenvalues(probe.mean_jjt);
  probe.singular_values = Tensor({m});
  for (std::size_t i = 0; i < m; ++i) {
    probe.singular_values[i] = std::sqrt(std::max(eig[i], real(0)));
  }
  return probe;
}

Tensor random_orthonormal_rows(std::size_t m, std::size_t n, Rng& rng) {
  if (m > n) throw ConfigError("orthonormal rows need m <= n");
  Tensor w({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (;;) {
      for (std::size_t j = 0; j < n; ++j) w(i, j) = static_cast<real>(rng.normal());
      // two projection passes for numerical orthogonality
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < i; ++k) {
          real dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += w(i, j) * w(k, j);
          for (std::size_t j = 0; j < n; ++j) w(i, j) -= dot * w(k, j);
        }
      }
      real norm = 0;
      for (std::size_t j = 0; j < n; ++j) norm += w(i, j) * w(i, j);
      norm = std::sqrt(norm);
      if (norm > real(1e-8)) {
        for (std::size_t j = 0; j < n; ++j) w(i, j) /= norm;
        break;
      }
      // degenerate draw; resample this row
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// ShiftMonitor

ShiftMonitor::ShiftMonitor(Network& net, const Tensor& probe_sample, std::uint64_t seed) {
  init_units(net, probe_sample, nullptr, seed);
}

ShiftMonitor::ShiftMonitor(Network& net, const Tensor& probe_sample, std::vector<int> units) {
  init_units(net, probe_sample, &units, 0);
}

void ShiftMonitor::init_units(Network& net, const Tensor& probe_sample,
                              const std::vector<int>* units, std::uint64_t seed) {
  std::vector<Tensor> inputs;
  net.forward_collect(probe_sample, Mode::eval, &inputs);
  Rng rng(seed);
  if (units && units->size() != inputs.size()) {
    throw ConfigError("shift monitor: expected one unit per layer (" +
                      std::to_string(inputs.size()) + " layers)");
  }
  for (std::size_t l = 0; l < inputs.size(); ++l) {
    const std::size_t width = inputs[l].size() / inputs[l].dim(0);
    int unit;
    if (units) {
      unit = (*units)[l];
      if (unit < 0 || static_cast<std::size_t>(unit) >= width) {
        throw ConfigError("shift monitor: unit " + std::to_string(unit) +
                          " out of range for layer " + std::to_string(l) + " input width " +
                          std::to_string(width));
      }
    } else {
      unit = static_cast<int>(rng.index(width));
    }
    ShiftTrace trace;
    trace.layer_index = static_cast<int>(l);
    trace.unit_index = unit;
    traces_.push_back(std::move(trace));
    input_dims_.push_back(width);
  }
}

void ShiftMonitor::observe(int epoch, Network& net, const Tensor& probe) {
  std::vector<Tensor> inputs;
  net.forward_collect(probe, Mode::eval, &inputs);
  if (inputs.size() != traces_.size()) {
    throw StateError("shift monitor: network layer count changed");
  }
  for (std::size_t l = 0; l < inputs.size(); ++l) {
    const std::size_t batch = inputs[l].dim(0);
    const std::size_t width = inputs[l].size() / batch;
    if (width != input_dims_[l]) {
      throw StateError("shift monitor: layer " + std::to_string(l) + " input width changed");
    }
    const std::size_t unit = static_cast<std::size_t>(traces_[l].unit_index);
    double sum = 0;
    const real* data = inputs[l].data();
    for (std::size_t b = 0; b < batch; ++b) sum += data[b * width + unit];
    if (!traces_[l].means.empty() && traces_[l].means.back().first >= epoch) {
      throw StateError("shift monitor: epochs must be strictly increasing");
    }
    traces_[l].means.emplace_back(epoch, sum / static_cast<double>(batch));
  }
}

}  // namespace normprop
