// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_KERNELS_HPP
#define NORMPROP_KERNELS_HPP

#include <cstdint>
#include <vector>

#include "normprop/tensor.hpp"

namespace normprop::kernels {

// OpenMP-parallel kernels. Parallelism is always across independent output
// elements; every reduction runs serially in a fixed left-to-right order, so
// results are bit-identical for any thread count (and to the serial
// reference in normprop::serial where the loop nests match).

/// [m,k] x [k,n] -> [m,n]. Inner sum runs left-to-right over k.
Tensor matmul(const Tensor& a, const Tensor& b);

/// a * b^T: [m,k] x [n,k] -> [m,n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// a^T * b: [k,m] x [k,n] -> [m,n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// Cross-correlation (no kernel flip) with zero padding.
/// input [d,L,B] or [N,d,L,B]; filters [m,d,h,w]; output rank matches input.
/// L' = floor((L + 2*pad - h)/stride) + 1, likewise B'.
Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int pad);

/// Gradient of conv2d w.r.t. its input. grad_out [N,m,L',B'], returns [N,d,L,B].
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& filters, int stride,
                         int pad, std::size_t in_h, std::size_t in_w);

/// Gradient of conv2d w.r.t. the filters. Returns [m,d,h,w].
Tensor conv2d_filter_grad(const Tensor& input, const Tensor& grad_out, int stride,
                          int pad, std::size_t kernel_h, std::size_t kernel_w);

enum class PoolMode { max, avg };

/// Per-channel spatial pooling. input [m,L,B] or [N,m,L,B].
/// avg divides by the full kernel area including zero padding; max considers
/// only in-bounds positions. For max mode, argmax (when non-null) receives
/// the flat input index of the first maximal element of every window.
Tensor pool2d(const Tensor& input, int kernel, int stride, int pad, PoolMode mode,
              std::vector<std::int64_t>* argmax = nullptr);

/// Backward of pool2d. Max routes each window's gradient to its recorded
/// argmax; avg spreads gradient/kernel^2 over the in-bounds window.
Tensor pool2d_backward(const Tensor& grad_out, const std::vector<std::size_t>& in_shape,
                       int kernel, int stride, int pad, PoolMode mode,
                       const std::vector<std::int64_t>& argmax);

/// Row/filter l2 norms: [m,n] or [m,d,h,w] -> [m]. Frobenius per filter.
Tensor row_l2_norms(const Tensor& w);

}  // namespace normprop::kernels

#endif
