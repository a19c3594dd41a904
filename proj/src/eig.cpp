// SPDX-License-Identifier: Apache-2.0
#include "normprop/eig.hpp"

#include <algorithm>
#include <cmath>

#include "normprop/errors.hpp"

namespace normprop {

std::vector<real> symmetric_eigenvalues(const Tensor& input) {
  if (input.rank() != 2 || input.dim(0) != input.dim(1)) {
    throw DimensionError("eigenvalues need a square matrix, got " + input.shape_str());
  }
  const std::size_t n = input.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::fabs(input(i, j) - input(j, i)) > real(1e-10)) {
        throw DataError("matrix is not symmetric within 1e-10");
      }
    }
  }
  Tensor a = input;
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    real off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < real(1e-28)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const real apq = a(p, q);
        if (std::fabs(apq) < real(1e-300)) continue;
        const real theta = (a(q, q) - a(p, p)) / (2 * apq);
        const real t = (theta >= 0 ? real(1) : real(-1)) /
                       (std::fabs(theta) + std::sqrt(theta * theta + 1));
        const real c = real(1) / std::sqrt(t * t + 1);
        const real s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const real akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const real apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<real> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace normprop
