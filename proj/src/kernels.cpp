// SPDX-License-Identifier: Apache-2.0
#include "normprop/kernels.hpp"

#include <cmath>
#include <limits>

namespace normprop::kernels {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) +
                         ", got " + t.shape_str());
  }
}

struct ConvDims {
  std::size_t n, d, in_h, in_w;   // input
  std::size_t m, kh, kw;          // filters
  std::size_t out_h, out_w;
  bool batched;
};

ConvDims conv_dims(const std::vector<std::size_t>& in_shape, const Tensor& filters,
                   int stride, int pad) {
  if (filters.rank() != 4) {
    throw DimensionError("conv filters must be [m,d,h,w], got " + filters.shape_str());
  }
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (pad < 0) throw ConfigError("conv pad must be >= 0");
  ConvDims cd{};
  cd.batched = in_shape.size() == 4;
  if (!cd.batched && in_shape.size() != 3) {
    throw DimensionError("conv input must be [d,L,B] or [N,d,L,B], got " +
                         Tensor::shape_string(in_shape));
  }
  cd.n = cd.batched ? in_shape[0] : 1;
  cd.d = in_shape[cd.batched ? 1 : 0];
  cd.in_h = in_shape[cd.batched ? 2 : 1];
  cd.in_w = in_shape[cd.batched ? 3 : 2];
  cd.m = filters.dim(0);
  cd.kh = filters.dim(2);
  cd.kw = filters.dim(3);
  if (filters.dim(1) != cd.d) {
    throw DimensionError("conv channel mismatch: input " + Tensor::shape_string(in_shape) +
                         " vs filters " + filters.shape_str());
  }
  const std::size_t padded_h = cd.in_h + 2 * static_cast<std::size_t>(pad);
  const std::size_t padded_w = cd.in_w + 2 * static_cast<std::size_t>(pad);
  if (cd.kh > padded_h || cd.kw > padded_w) {
    throw DimensionError("conv kernel " + filters.shape_str() + " larger than padded input " +
                         Tensor::shape_string(in_shape) + " with pad " + std::to_string(pad));
  }
  cd.out_h = (padded_h - cd.kh) / static_cast<std::size_t>(stride) + 1;
  cd.out_w = (padded_w - cd.kw) / static_cast<std::size_t>(stride) + 1;
  return cd;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner dimensions disagree: " + a.shape_str() + " x " +
                         b.shape_str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const real* pa = a.data();
  const real* pb = b.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[p * n + j];
      po[i * n + j] = acc;
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt lhs");
  require_rank(b, 2, "matmul_nt rhs");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + a.shape_str() + " x " +
                         b.shape_str() + "^T");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  const real* pa = a.data();
  const real* pb = b.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[i * k + p] * pb[j * k + p];
      po[i * n + j] = acc;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn lhs");
  require_rank(b, 2, "matmul_tn rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn inner dimensions disagree: " + a.shape_str() + "^T x " +
                         b.shape_str());
  }
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const real* pa = a.data();
  const real* pb = b.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += pa[p * m + i] * pb[p * n + j];
      po[i * n + j] = acc;
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int pad) {
  const ConvDims cd = conv_dims(input.shape(), filters, stride, pad);
  Tensor out(cd.batched ? std::vector<std::size_t>{cd.n, cd.m, cd.out_h, cd.out_w}
                        : std::vector<std::size_t>{cd.m, cd.out_h, cd.out_w});
  const real* px = input.data();
  const real* pw = filters.data();
  real* po = out.data();
  const std::int64_t s = stride, p = pad;
  const std::int64_t H = cd.in_h, W = cd.in_w;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < static_cast<std::int64_t>(cd.n); ++n) {
    for (std::int64_t f = 0; f < static_cast<std::int64_t>(cd.m); ++f) {
      const real* xn = px + n * cd.d * cd.in_h * cd.in_w;
      const real* wf = pw + f * cd.d * cd.kh * cd.kw;
      real* on = po + (n * cd.m + f) * cd.out_h * cd.out_w;
      for (std::size_t oy = 0; oy < cd.out_h; ++oy) {
        for (std::size_t ox = 0; ox < cd.out_w; ++ox) {
          real acc = 0;
          for (std::size_t c = 0; c < cd.d; ++c) {
            for (std::size_t ky = 0; ky < cd.kh; ++ky) {
              const std::int64_t y = static_cast<std::int64_t>(oy) * s + static_cast<std::int64_t>(ky) - p;
              if (y < 0 || y >= H) continue;
              for (std::size_t kx = 0; kx < cd.kw; ++kx) {
                const std::int64_t x = static_cast<std::int64_t>(ox) * s + static_cast<std::int64_t>(kx) - p;
                if (x < 0 || x >= W) continue;
                acc += xn[(c * cd.in_h + y) * cd.in_w + x] * wf[(c * cd.kh + ky) * cd.kw + kx];
              }
            }
          }
          on[oy * cd.out_w + ox] = acc;
        }
      }
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& filters, int stride,
                         int pad, std::size_t in_h, std::size_t in_w) {
  require_rank(grad_out, 4, "conv2d_input_grad grad_out");
  require_rank(filters, 4, "conv2d_input_grad filters");
  const std::size_t n = grad_out.dim(0), m = grad_out.dim(1);
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  const std::size_t d = filters.dim(1), kh = filters.dim(2), kw = filters.dim(3);
  if (filters.dim(0) != m) {
    throw DimensionError("conv2d_input_grad filter count mismatch: " + grad_out.shape_str() +
                         " vs " + filters.shape_str());
  }
  Tensor dx({n, d, in_h, in_w});
  const real* pg = grad_out.data();
  const real* pw = filters.data();
  real* pd = dx.data();
  const std::int64_t s = stride, p = pad;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(d); ++c) {
      real* dxc = pd + (b * d + c) * in_h * in_w;
      for (std::size_t y = 0; y < in_h; ++y) {
        for (std::size_t x = 0; x < in_w; ++x) {
          real acc = 0;
          for (std::size_t f = 0; f < m; ++f) {
            const real* gf = pg + (b * m + f) * out_h * out_w;
            const real* wf = pw + (f * d + c) * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::int64_t ty = static_cast<std::int64_t>(y) + p - static_cast<std::int64_t>(ky);
              if (ty < 0 || ty % s != 0) continue;
              const std::int64_t oy = ty / s;
              if (oy >= static_cast<std::int64_t>(out_h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::int64_t tx = static_cast<std::int64_t>(x) + p - static_cast<std::int64_t>(kx);
                if (tx < 0 || tx % s != 0) continue;
                const std::int64_t ox = tx / s;
                if (ox >= static_cast<std::int64_t>(out_w)) continue;
                acc += gf[oy * out_w + ox] * wf[ky * kw + kx];
              }
            }
          }
          dxc[y * in_w + x] = acc;
        }
      }
    }
  }
  return dx;
}

Tensor conv2d_filter_grad(const Tensor& input, const Tensor& grad_out, int stride,
                          int pad, std::size_t kernel_h, std::size_t kernel_w) {
  require_rank(input, 4, "conv2d_filter_grad input");
  require_rank(grad_out, 4, "conv2d_filter_grad grad_out");
  const std::size_t n = input.dim(0), d = input.dim(1);
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t m = grad_out.dim(1), out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  if (grad_out.dim(0) != n) {
    throw DimensionError("conv2d_filter_grad batch mismatch: " + input.shape_str() + " vs " +
                         grad_out.shape_str());
  }
  Tensor dw({m, d, kernel_h, kernel_w});
  const real* px = input.data();
  const real* pg = grad_out.data();
  real* pd = dw.data();
  const std::int64_t s = stride, p = pad;
  const std::int64_t H = in_h, W = in_w;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t f = 0; f < static_cast<std::int64_t>(m); ++f) {
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(d); ++c) {
      real* dwf = pd + (f * d + c) * kernel_h * kernel_w;
      for (std::size_t ky = 0; ky < kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < kernel_w; ++kx) {
          real acc = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const real* xc = px + (b * d + c) * in_h * in_w;
            const real* gf = pg + (b * m + f) * out_h * out_w;
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const std::int64_t y = static_cast<std::int64_t>(oy) * s + static_cast<std::int64_t>(ky) - p;
              if (y < 0 || y >= H) continue;
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::int64_t x = static_cast<std::int64_t>(ox) * s + static_cast<std::int64_t>(kx) - p;
                if (x < 0 || x >= W) continue;
                acc += xc[y * in_w + x] * gf[oy * out_w + ox];
              }
            }
          }
          dwf[ky * kernel_w + kx] = acc;
        }
      }
    }
  }
  return dw;
}

Tensor pool2d(const Tensor& input, int kernel, int stride, int pad, PoolMode mode,
              std::vector<std::int64_t>* argmax) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw DimensionError("pool input must be [m,L,B] or [N,m,L,B], got " + input.shape_str());
  }
  if (kernel < 1 || stride < 1 || pad < 0) throw ConfigError("pool kernel/stride/pad invalid");
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t ch = input.dim(batched ? 1 : 0);
  const std::size_t in_h = input.dim(batched ? 2 : 1);
  const std::size_t in_w = input.dim(batched ? 3 : 2);
  const std::size_t k = kernel;
  const std::size_t padded_h = in_h + 2 * static_cast<std::size_t>(pad);
  const std::size_t padded_w = in_w + 2 * static_cast<std::size_t>(pad);
  if (k > padded_h || k > padded_w) {
    throw DimensionError("pool kernel " + std::to_string(kernel) + " larger than padded input " +
                         input.shape_str());
  }
  const std::size_t out_h = (padded_h - k) / static_cast<std::size_t>(stride) + 1;
  const std::size_t out_w = (padded_w - k) / static_cast<std::size_t>(stride) + 1;
  Tensor out(batched ? std::vector<std::size_t>{n, ch, out_h, out_w}
                     : std::vector<std::size_t>{ch, out_h, out_w});
  if (argmax) argmax->assign(out.size(), -1);
  const real* px = input.data();
  real* po = out.data();
  const std::int64_t s = stride, p = pad;
  const real inv_area = real(1) / static_cast<real>(k * k);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(ch); ++c) {
      const std::size_t plane = (b * ch + c) * in_h * in_w;
      real* oc = po + (b * ch + c) * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          if (mode == PoolMode::max) {
            real best = -std::numeric_limits<real>::infinity();
            std::int64_t best_idx = -1;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::int64_t y = static_cast<std::int64_t>(oy) * s + static_cast<std::int64_t>(ky) - p;
              if (y < 0 || y >= static_cast<std::int64_t>(in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::int64_t x = static_cast<std::int64_t>(ox) * s + static_cast<std::int64_t>(kx) - p;
                if (x < 0 || x >= static_cast<std::int64_t>(in_w)) continue;
                const real v = px[plane + y * in_w + x];
                if (v > best) {  // strict: ties keep the first maximal element
                  best = v;
                  best_idx = static_cast<std::int64_t>(plane + y * in_w + x);
                }
              }
            }
            oc[oy * out_w + ox] = best;
            if (argmax) (*argmax)[(b * ch + c) * out_h * out_w + oy * out_w + ox] = best_idx;
          } else {
            real acc = 0;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::int64_t y = static_cast<std::int64_t>(oy) * s + static_cast<std::int64_t>(ky) - p;
              if (y < 0 || y >= static_cast<std::int64_t>(in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::int64_t x = static_cast<std::int64_t>(ox) * s + static_cast<std::int64_t>(kx) - p;
                if (x < 0 || x >= static_cast<std::int64_t>(in_w)) continue;
                acc += px[plane + y * in_w + x];
              }
            }
            oc[oy * out_w + ox] = acc * inv_area;
          }
        }
      }
    }
  }
  return out;
}

Tensor pool2d_backward(const Tensor& grad_out, const std::vector<std::size_t>& in_shape,
                       int kernel, int stride, int pad, PoolMode mode,
                       const std::vector<std::int64_t>& argmax) {
  const bool batched = in_shape.size() == 4;
  Tensor dx(in_shape);
  const std::size_t n = batched ? in_shape[0] : 1;
  const std::size_t ch = in_shape[batched ? 1 : 0];
  const std::size_t in_h = in_shape[batched ? 2 : 1];
  const std::size_t in_w = in_shape[batched ? 3 : 2];
  const std::size_t out_h = grad_out.dim(batched ? 2 : 1);
  const std::size_t out_w = grad_out.dim(batched ? 3 : 2);
  const real* pg = grad_out.data();
  real* pd = dx.data();
  const std::size_t k = kernel;
  const std::int64_t s = stride, p = pad;
  const real inv_area = real(1) / static_cast<real>(k * k);
  if (mode == PoolMode::max && argmax.size() != grad_out.size()) {
    throw StateError("pool2d_backward(max) requires the argmax recorded by forward");
  }
  // Scatter is per (batch,channel) plane; planes are independent.
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(ch); ++c) {
      const std::size_t oplane = (b * ch + c) * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const real g = pg[oplane + oy * out_w + ox];
          if (mode == PoolMode::max) {
            const std::int64_t idx = argmax[oplane + oy * out_w + ox];
            if (idx >= 0) pd[idx] += g;
          } else {
            const std::size_t plane = (b * ch + c) * in_h * in_w;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::int64_t y = static_cast<std::int64_t>(oy) * s + static_cast<std::int64_t>(ky) - p;
              if (y < 0 || y >= static_cast<std::int64_t>(in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::int64_t x = static_cast<std::int64_t>(ox) * s + static_cast<std::int64_t>(kx) - p;
                if (x < 0 || x >= static_cast<std::int64_t>(in_w)) continue;
                pd[plane + y * in_w + x] += g * inv_area;
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor row_l2_norms(const Tensor& w) {
  if (w.rank() < 2) {
    throw DimensionError("row_l2_norms expects rank >= 2, got " + w.shape_str());
  }
  const std::size_t m = w.dim(0);
  const std::size_t row = w.size() / m;
  Tensor out({m});
  const real* pw = w.data();
  real* po = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    real acc = 0;
    for (std::size_t j = 0; j < row; ++j) {
      const real v = pw[i * row + j];
      acc += v * v;
    }
    po[i] = std::sqrt(acc);
  }
  return out;
}

}  // namespace normprop::kernels
