// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_ANALYSIS_HPP
#define NORMPROP_ANALYSIS_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "normprop/layers.hpp"
#include "normprop/tensor.hpp"

namespace normprop {

/// How far the pre-activation covariance sits from its best diagonal
/// approximation, together with the a-priori bound on that distance.
struct CovarianceReport {
  Tensor sigma_hat;        // [m,m] empirical covariance, symmetric
  Tensor alpha_star;       // [m] optimal diagonal, sigma^2 * ||W_i||^2
  real gap = 0;            // ||Sigma_hat - diag(alpha_star)||_F
  real gap_empirical = 0;  // gap at the empirically optimal diagonal, diag(Sigma_hat)
  real bound = 0;          // sigma^2 * mu * sqrt(sum_{i!=j} ||W_i||^2 ||W_j||^2)
  real coherence = 0;      // mu in [0,1]
};

/// Maximum absolute cosine between distinct rows (filters are flattened).
/// Needs at least two rows and no zero rows.
real coherence(const Tensor& w);

/// The canonical error bound: sigma^2 * mu * sqrt(sum_{i!=j} ||W_i||^2 ||W_j||^2).
real canonical_bound(const Tensor& w, real sigma);

/// Empirical covariance of u-samples [N,m] against the best diagonal.
/// When `assume_zero_mean` the input is treated as centered by construction
/// (population mean 0), which lowers the variance of the gap estimate;
/// otherwise the sample mean is subtracted. Requires N >= 100.
CovarianceReport canonical_gap(const Tensor& samples_u, const Tensor& w, real sigma,
                               bool assume_zero_mean = true);

struct JacobianProbe {
  Tensor mean_jjt;         // [m,m] average of J J^T over the samples
  Tensor singular_values;  // [m] sqrt of the eigenvalues of mean_jjt, ascending
};

/// Per-sample Jacobian of a normalized dense layer w.r.t. its input,
/// averaged as J J^T over the given standard-normal samples. With unit-norm
/// low-coherence rows, gamma=1, beta=0 and ReLU the diagonal approaches
/// 0.5/c1^2 (about 1.47) and the singular values 1.21.
JacobianProbe jacobian_probe(const NormPropDense& layer, const Tensor& x_samples);

/// Random [m,n] matrix with exactly orthonormal rows (m <= n), via
/// Gram-Schmidt on Gaussian rows.
Tensor random_orthonormal_rows(std::size_t m, std::size_t n, class Rng& rng);

/// Per-epoch mean of the input feature feeding one fixed unit of one layer.
struct ShiftTrace {
  int layer_index = 0;
  int unit_index = 0;
  std::vector<std::pair<int, double>> means;  // (epoch, mean), epochs strictly increasing
};

/// Records, after every training epoch, the mean over a fixed probe set of
/// one randomly chosen (but fixed) input feature per layer. The probe set
/// and the unit choices are fixed when the monitor is created.
class ShiftMonitor {
public:
  /// Chooses one unit per layer with the seeded generator. The probe batch
  /// is only used to learn each layer's input width.
  ShiftMonitor(Network& net, const Tensor& probe_sample, std::uint64_t seed);

  /// Explicit unit choice per layer; out-of-range units are a configuration
  /// error.
  ShiftMonitor(Network& net, const Tensor& probe_sample, std::vector<int> units);

  /// Forwards the probe set in eval mode and appends one mean per layer.
  void observe(int epoch, Network& net, const Tensor& probe);

  const std::vector<ShiftTrace>& traces() const { return traces_; }

private:
  void init_units(Network& net, const Tensor& probe_sample, const std::vector<int>* units,
                  std::uint64_t seed);
  std::vector<ShiftTrace> traces_;
  std::vector<std::size_t> input_dims_;
};

}  // namespace normprop

#endif
