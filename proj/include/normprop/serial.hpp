// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_SERIAL_HPP
#define NORMPROP_SERIAL_HPP

#include "normprop/kernels.hpp"
#include "normprop/tensor.hpp"

namespace normprop::serial {

// Naive single-threaded reference kernels. Kept as the independent oracle for
// the parallel kernels (tests) and as the baseline for the benchmark tool.
// conv/pool work on an explicitly materialized padded buffer rather than
// index arithmetic, so the two implementations share no code path.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int pad);
Tensor pool2d(const Tensor& input, int kernel, int stride, int pad, kernels::PoolMode mode);
Tensor row_l2_norms(const Tensor& w);

}  // namespace normprop::serial

#endif
