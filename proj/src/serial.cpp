// SPDX-License-Identifier: Apache-2.0
#include "normprop/serial.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace normprop::serial {

namespace {

// Copies one [d,L,B] image into a zero-padded (or fill-padded) buffer.
std::vector<real> pad_image(const real* src, std::size_t d, std::size_t h, std::size_t w,
                            std::size_t pad, real fill) {
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  std::vector<real> buf(d * ph * pw, fill);
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        buf[(c * ph + y + pad) * pw + x + pad] = src[(c * h + y) * w + x];
  return buf;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, int stride, int pad) {
  const bool batched = input.rank() == 4;
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t d = input.dim(batched ? 1 : 0);
  const std::size_t h = input.dim(batched ? 2 : 1);
  const std::size_t w = input.dim(batched ? 3 : 2);
  const std::size_t m = filters.dim(0), kh = filters.dim(2), kw = filters.dim(3);
  const std::size_t ph = h + 2 * static_cast<std::size_t>(pad);
  const std::size_t pw = w + 2 * static_cast<std::size_t>(pad);
  const std::size_t oh = (ph - kh) / static_cast<std::size_t>(stride) + 1;
  const std::size_t ow = (pw - kw) / static_cast<std::size_t>(stride) + 1;
  Tensor out(batched ? std::vector<std::size_t>{n, m, oh, ow}
                     : std::vector<std::size_t>{m, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    const std::vector<real> padded =
        pad_image(input.data() + b * d * h * w, d, h, w, pad, real(0));
    for (std::size_t f = 0; f < m; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          real acc = 0;
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx)
                acc += padded[(c * ph + oy * stride + ky) * pw + ox * stride + kx] *
                       filters(f, c, ky, kx);
          out.data()[((b * m + f) * oh + oy) * ow + ox] = acc;
        }
  }
  return out;
}

Tensor pool2d(const Tensor& input, int kernel, int stride, int pad, kernels::PoolMode mode) {
  const bool batched = input.rank() == 4;
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t ch = input.dim(batched ? 1 : 0);
  const std::size_t h = input.dim(batched ? 2 : 1);
  const std::size_t w = input.dim(batched ? 3 : 2);
  const std::size_t k = kernel;
  const std::size_t ph = h + 2 * static_cast<std::size_t>(pad);
  const std::size_t pw = w + 2 * static_cast<std::size_t>(pad);
  const std::size_t oh = (ph - k) / static_cast<std::size_t>(stride) + 1;
  const std::size_t ow = (pw - k) / static_cast<std::size_t>(stride) + 1;
  Tensor out(batched ? std::vector<std::size_t>{n, ch, oh, ow}
                     : std::vector<std::size_t>{ch, oh, ow});
  const real fill = mode == kernels::PoolMode::max
                        ? -std::numeric_limits<real>::infinity()
                        : real(0);
  for (std::size_t b = 0; b < n; ++b) {
    const std::vector<real> padded =
        pad_image(input.data() + b * ch * h * w, ch, h, w, pad, fill);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          real v;
          if (mode == kernels::PoolMode::max) {
            v = -std::numeric_limits<real>::infinity();
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                v = std::max(v, padded[(c * ph + oy * stride + ky) * pw + ox * stride + kx]);
          } else {
            v = 0;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                v += padded[(c * ph + oy * stride + ky) * pw + ox * stride + kx];
            v /= static_cast<real>(k * k);
          }
          out.data()[((b * ch + c) * oh + oy) * ow + ox] = v;
        }
  }
  return out;
}

Tensor row_l2_norms(const Tensor& w) {
  const std::size_t m = w.dim(0);
  const std::size_t row = w.size() / m;
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    real acc = 0;
    for (std::size_t j = 0; j < row; ++j) acc += w[i * row + j] * w[i * row + j];
    out[i] = std::sqrt(acc);
  }
  return out;
}

}  // namespace normprop::serial
