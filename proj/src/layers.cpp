// SPDX-License-Identifier: Apache-2.0
#include "normprop/layers.hpp"

#include <cmath>

#include "normprop/errors.hpp"

namespace normprop {

namespace {

// [B, rest...] -> [B, prod(rest)]
Tensor flatten_batch(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("layer input must be batched, got " + x.shape_str());
  if (x.rank() == 2) return x;
  std::size_t rest = 1;
  for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
  return x.reshaped({x.dim(0), rest});
}

void check_row_norms(const Tensor& norms, const char* kind) {
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!std::isfinite(norms[i])) {
      throw DivergenceError(std::string(kind) + " row " + std::to_string(i) +
                            " has a non-finite norm");
    }
    if (!(norms[i] > kNormFloor)) {
      throw NormalizationError(std::string(kind) + " row " + std::to_string(i) +
                               " has norm <= " + std::to_string(kNormFloor));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// NormPropDense

NormPropDense::NormPropDense(Tensor w, ActivationStats stats, Activation act, real gamma_init)
    : w_(std::move(w)), stats_(stats), act_(std::move(act)) {
  if (w_.rank() != 2) throw DimensionError("dense weights must be [m,n], got " + w_.shape_str());
  if (!(stats_.c1 > 0)) throw ConfigError("activation stats need c1 > 0");
  check_row_norms(kernels::row_l2_norms(w_), "dense weight");
  gamma_ = Tensor::full({units()}, gamma_init);
  beta_ = Tensor({units()});
  dw_ = Tensor(w_.shape());
  dgamma_ = Tensor({units()});
  dbeta_ = Tensor({units()});
}

Tensor NormPropDense::forward(const Tensor& x, Mode mode) {
  const Tensor xf = flatten_batch(x);
  if (xf.dim(1) != input_dim()) {
    throw DimensionError("dense input " + x.shape_str() + " does not match weights " +
                         w_.shape_str());
  }
  Tensor norms = kernels::row_l2_norms(w_);
  check_row_norms(norms, "dense weight");
  const std::size_t batch = xf.dim(0), m = units();
  Tensor u = kernels::matmul_nt(xf, w_);
  Tensor z({batch, m});
  Tensor out({batch, m});
  const real c1 = stats_.c1, c2 = stats_.c2;
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const real zz = gamma_[i] * u(b, i) / norms[i] + beta_[i];
      z(b, i) = zz;
      out(b, i) = (act_(zz) - c2) / c1;
    }
  }
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    x_ = xf;
    u_ = std::move(u);
    z_ = std::move(z);
    row_norms_ = std::move(norms);
    cached_ = true;
  }
  return out;
}

Tensor NormPropDense::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on NormPropDense");
  const std::size_t batch = x_.dim(0), m = units();
  if (grad_out.rank() != 2 || grad_out.dim(0) != batch || grad_out.dim(1) != m) {
    throw DimensionError("grad_out " + grad_out.shape_str() + " does not match output");
  }
  const real c1 = stats_.c1;
  Tensor dz({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      dz(b, i) = grad_out(b, i) * act_.deriv(z_(b, i)) / c1;
    }
  }
  // per-unit reductions over the batch, fixed order
  Tensor s({m});
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    real sb = 0, sg = 0, su = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      sb += dz(b, i);
      sg += dz(b, i) * u_(b, i);
      su += dz(b, i) * u_(b, i);
    }
    dbeta_[i] = sb;
    dgamma_[i] = sg / row_norms_[i];
    s[i] = su;
  }
  Tensor du({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      du(b, i) = dz(b, i) * gamma_[i] / row_norms_[i];
    }
  }
  Tensor grad_in = kernels::matmul(du, w_);
  Tensor t = kernels::matmul_tn(dz, x_);
  const std::size_t n = input_dim();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    const real r = row_norms_[i];
    const real a = gamma_[i] / r;
    const real c = gamma_[i] * s[i] / (r * r * r);
    for (std::size_t j = 0; j < n; ++j) {
      dw_(i, j) = a * t(i, j) - c * w_(i, j);
    }
  }
  return grad_in.reshaped(in_shape_);
}

std::vector<ParamRef> NormPropDense::params() {
  return {{"W", &w_, &dw_, true}, {"gamma", &gamma_, &dgamma_, false},
          {"beta", &beta_, &dbeta_, false}};
}

// ---------------------------------------------------------------------------
// NormPropConv

NormPropConv::NormPropConv(Tensor filters, int stride, int pad, ActivationStats stats,
                           Activation act, real gamma_init)
    : w_(std::move(filters)), stride_(stride), pad_(pad), stats_(stats), act_(std::move(act)) {
  if (w_.rank() != 4) throw DimensionError("conv filters must be [m,d,h,w], got " + w_.shape_str());
  if (!(stats_.c1 > 0)) throw ConfigError("activation stats need c1 > 0");
  check_row_norms(kernels::row_l2_norms(w_), "conv filter");
  const std::size_t m = w_.dim(0);
  gamma_ = Tensor::full({m}, gamma_init);
  beta_ = Tensor({m});
  dw_ = Tensor(w_.shape());
  dgamma_ = Tensor({m});
  dbeta_ = Tensor({m});
}

Tensor NormPropConv::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4) {
    throw DimensionError("conv layer input must be [N,d,L,B], got " + x.shape_str());
  }
  Tensor norms = kernels::row_l2_norms(w_);
  check_row_norms(norms, "conv filter");
  Tensor v = kernels::conv2d(x, w_, stride_, pad_);
  const std::size_t n = v.dim(0), m = v.dim(1), pix = v.dim(2) * v.dim(3);
  Tensor z(v.shape());
  Tensor out(v.shape());
  const real c1 = stats_.c1, c2 = stats_.c2;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
      const real g = gamma_[i] / norms[i], be = beta_[i];
      const real* pv = v.data() + (b * m + i) * pix;
      real* pz = z.data() + (b * m + i) * pix;
      real* po = out.data() + (b * m + i) * pix;
      for (std::size_t p = 0; p < pix; ++p) {
        const real zz = g * pv[p] + be;
        pz[p] = zz;
        po[p] = (act_(zz) - c2) / c1;
      }
    }
  }
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    x_ = x;
    v_ = std::move(v);
    z_ = std::move(z);
    row_norms_ = std::move(norms);
    cached_ = true;
  }
  return out;
}

Tensor NormPropConv::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on NormPropConv");
  if (!grad_out.same_shape(z_)) {
    throw DimensionError("grad_out " + grad_out.shape_str() + " does not match output " +
                         z_.shape_str());
  }
  const std::size_t n = z_.dim(0), m = z_.dim(1), pix = z_.dim(2) * z_.dim(3);
  const real c1 = stats_.c1;
  Tensor dv(z_.shape());
  std::vector<real> s(m);  // per-filter sum of dv*v, feeds the norm term of dW
  // per-filter reductions over batch and positions, fixed order
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    const real r = row_norms_[i];
    const real g = gamma_[i] / r;
    real sb = 0, sg = 0, sv = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const real* pg = grad_out.data() + (b * m + i) * pix;
      const real* pz = z_.data() + (b * m + i) * pix;
      const real* pv = v_.data() + (b * m + i) * pix;
      real* pd = dv.data() + (b * m + i) * pix;
      for (std::size_t p = 0; p < pix; ++p) {
        const real dzz = pg[p] * act_.deriv(pz[p]) / c1;
        sb += dzz;
        sg += dzz * pv[p];
        const real dvv = dzz * g;
        pd[p] = dvv;
        sv += dvv * pv[p];
      }
    }
    dbeta_[i] = sb;
    dgamma_[i] = sg / r;
    s[i] = sv;
  }

  Tensor grad_in = kernels::conv2d_input_grad(dv, w_, stride_, pad_, in_shape_[2], in_shape_[3]);
  Tensor dw_raw = kernels::conv2d_filter_grad(x_, dv, stride_, pad_, w_.dim(2), w_.dim(3));
  const std::size_t row = w_.size() / m;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    const real r = row_norms_[i];
    const real c = s[i] / (r * r);
    for (std::size_t e = 0; e < row; ++e) {
      dw_.data()[i * row + e] = dw_raw.data()[i * row + e] - c * w_.data()[i * row + e];
    }
  }
  return grad_in;
}

std::vector<ParamRef> NormPropConv::params() {
  return {{"W", &w_, &dw_, true}, {"gamma", &gamma_, &dgamma_, false},
          {"beta", &beta_, &dbeta_, false}};
}

namespace {

std::size_t conv_extent(std::size_t in, int pad, std::size_t kernel, int stride,
                        const char* what) {
  const std::size_t padded = in + 2 * static_cast<std::size_t>(pad);
  if (kernel > padded) {
    throw DimensionError(std::string(what) + " kernel " + std::to_string(kernel) +
                         " larger than padded extent " + std::to_string(padded));
  }
  return (padded - kernel) / static_cast<std::size_t>(stride) + 1;
}

}  // namespace

std::vector<std::size_t> NormPropConv::output_sample_shape(
    const std::vector<std::size_t>& in) const {
  if (in.size() != 3) throw DimensionError("conv expects a [d,L,B] sample shape");
  return {w_.dim(0), conv_extent(in[1], pad_, w_.dim(2), stride_, "conv"),
          conv_extent(in[2], pad_, w_.dim(3), stride_, "conv")};
}

std::string NormPropConv::spec_string() const {
  return "C(" + std::to_string(w_.dim(0)) + "," + std::to_string(w_.dim(2)) + "," +
         std::to_string(stride_) + "," + std::to_string(pad_) + "):normprop";
}

// ---------------------------------------------------------------------------
// BatchNormDense

BatchNormDense::BatchNormDense(Tensor w, Activation act, real running_decay, real eps)
    : w_(std::move(w)), eps_(eps), act_(std::move(act)) {
  if (w_.rank() != 2) throw DimensionError("dense weights must be [m,n], got " + w_.shape_str());
  const std::size_t m = w_.dim(0);
  gamma_ = Tensor::full({m}, real(1));
  beta_ = Tensor({m});
  running_ = RunningStats(m, running_decay);
  dw_ = Tensor(w_.shape());
  dgamma_ = Tensor({m});
  dbeta_ = Tensor({m});
}

Tensor BatchNormDense::forward(const Tensor& x, Mode mode) {
  const Tensor xf = flatten_batch(x);
  if (xf.dim(1) != w_.dim(1)) {
    throw DimensionError("dense input " + x.shape_str() + " does not match weights " +
                         w_.shape_str());
  }
  const std::size_t batch = xf.dim(0), m = w_.dim(0);
  Tensor u = kernels::matmul_nt(xf, w_);
  Tensor z({batch, m});
  Tensor out({batch, m});
  if (mode == Mode::train) {
    if (batch < 2) {
      throw ConfigError(
          "batch normalization is inapplicable with batch size 1: train-mode statistics "
          "need at least 2 samples");
    }
    Tensor mu({m}), var({m}), inv({m});
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
      real sum = 0;
      for (std::size_t b = 0; b < batch; ++b) sum += u(b, j);
      const real mean = sum / static_cast<real>(batch);
      real ss = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const real d = u(b, j) - mean;
        ss += d * d;
      }
      mu[j] = mean;
      var[j] = ss / static_cast<real>(batch);
      inv[j] = real(1) / std::sqrt(var[j] + eps_);
    }
    Tensor uhat({batch, m});
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
      for (std::size_t j = 0; j < m; ++j) {
        const real uh = (u(b, j) - mu[j]) * inv[j];
        uhat(b, j) = uh;
        const real zz = gamma_[j] * uh + beta_[j];
        z(b, j) = zz;
        out(b, j) = act_(zz);
      }
    }
    running_.update(mu, var);
    in_shape_ = x.shape();
    x_ = xf;
    uhat_ = std::move(uhat);
    inv_std_ = std::move(inv);
    z_ = std::move(z);
    cached_ = true;
    return out;
  }
  // eval: frozen running estimates, no batch coupling
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      const real uh = (u(b, j) - running_.mean[j]) / std::sqrt(running_.var[j] + eps_);
      const real zz = gamma_[j] * uh + beta_[j];
      out(b, j) = act_(zz);
    }
  }
  return out;
}

Tensor BatchNormDense::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on BatchNormDense");
  const std::size_t batch = x_.dim(0), m = w_.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != batch || grad_out.dim(1) != m) {
    throw DimensionError("grad_out " + grad_out.shape_str() + " does not match output");
  }
  Tensor duh({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
    real sg = 0, sb = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const real g2 = grad_out(b, j) * act_.deriv(z_(b, j));
      duh(b, j) = g2 * gamma_[j];
      sg += g2 * uhat_(b, j);
      sb += g2;
    }
    dgamma_[j] = sg;
    dbeta_[j] = sb;
  }
  // gradient flows through the batch statistics
  Tensor du({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
    real sum_duh = 0, sum_duh_uhat = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      sum_duh += duh(b, j);
      sum_duh_uhat += duh(b, j) * uhat_(b, j);
    }
    const real scale = inv_std_[j] / static_cast<real>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      du(b, j) = scale * (static_cast<real>(batch) * duh(b, j) - sum_duh -
                          uhat_(b, j) * sum_duh_uhat);
    }
  }
  Tensor grad_in = kernels::matmul(du, w_);
  dw_ = kernels::matmul_tn(du, x_);
  return grad_in.reshaped(in_shape_);
}

std::vector<ParamRef> BatchNormDense::params() {
  return {{"W", &w_, &dw_, false}, {"gamma", &gamma_, &dgamma_, false},
          {"beta", &beta_, &dbeta_, false}};
}

// ---------------------------------------------------------------------------
// PlainDense

PlainDense::PlainDense(Tensor w, Activation act) : w_(std::move(w)), act_(std::move(act)) {
  if (w_.rank() != 2) throw DimensionError("dense weights must be [m,n], got " + w_.shape_str());
  beta_ = Tensor({w_.dim(0)});
  dw_ = Tensor(w_.shape());
  dbeta_ = Tensor({w_.dim(0)});
}

Tensor PlainDense::forward(const Tensor& x, Mode mode) {
  const Tensor xf = flatten_batch(x);
  if (xf.dim(1) != w_.dim(1)) {
    throw DimensionError("dense input " + x.shape_str() + " does not match weights " +
                         w_.shape_str());
  }
  const std::size_t batch = xf.dim(0), m = w_.dim(0);
  Tensor z = kernels::matmul_nt(xf, w_);
  Tensor out({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(batch); ++b) {
    for (std::size_t j = 0; j < m; ++j) {
      z(b, j) += beta_[j];
      out(b, j) = act_(z(b, j));
    }
  }
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    x_ = xf;
    z_ = std::move(z);
    cached_ = true;
  }
  return out;
}

Tensor PlainDense::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on PlainDense");
  const std::size_t batch = x_.dim(0), m = w_.dim(0);
  Tensor dz({batch, m});
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
    real sb = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      dz(b, j) = grad_out(b, j) * act_.deriv(z_(b, j));
      sb += dz(b, j);
    }
    dbeta_[j] = sb;
  }
  Tensor grad_in = kernels::matmul(dz, w_);
  dw_ = kernels::matmul_tn(dz, x_);
  return grad_in.reshaped(in_shape_);
}

std::vector<ParamRef> PlainDense::params() {
  return {{"W", &w_, &dw_, false}, {"beta", &beta_, &dbeta_, false}};
}

// ---------------------------------------------------------------------------
// PlainConv

PlainConv::PlainConv(Tensor filters, int stride, int pad, Activation act)
    : w_(std::move(filters)), stride_(stride), pad_(pad), act_(std::move(act)) {
  if (w_.rank() != 4) throw DimensionError("conv filters must be [m,d,h,w], got " + w_.shape_str());
  beta_ = Tensor({w_.dim(0)});
  dw_ = Tensor(w_.shape());
  dbeta_ = Tensor({w_.dim(0)});
}

Tensor PlainConv::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4) {
    throw DimensionError("conv layer input must be [N,d,L,B], got " + x.shape_str());
  }
  Tensor z = kernels::conv2d(x, w_, stride_, pad_);
  const std::size_t n = z.dim(0), m = z.dim(1), pix = z.dim(2) * z.dim(3);
  Tensor out(z.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
      real* pz = z.data() + (b * m + i) * pix;
      real* po = out.data() + (b * m + i) * pix;
      for (std::size_t p = 0; p < pix; ++p) {
        pz[p] += beta_[i];
        po[p] = act_(pz[p]);
      }
    }
  }
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    x_ = x;
    z_ = std::move(z);
    cached_ = true;
  }
  return out;
}

Tensor PlainConv::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on PlainConv");
  const std::size_t n = z_.dim(0), m = z_.dim(1), pix = z_.dim(2) * z_.dim(3);
  Tensor dz(z_.shape());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    real sb = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const real* pg = grad_out.data() + (b * m + i) * pix;
      const real* pz = z_.data() + (b * m + i) * pix;
      real* pd = dz.data() + (b * m + i) * pix;
      for (std::size_t p = 0; p < pix; ++p) {
        pd[p] = pg[p] * act_.deriv(pz[p]);
        sb += pd[p];
      }
    }
    dbeta_[i] = sb;
  }
  Tensor grad_in = kernels::conv2d_input_grad(dz, w_, stride_, pad_, in_shape_[2], in_shape_[3]);
  dw_ = kernels::conv2d_filter_grad(x_, dz, stride_, pad_, w_.dim(2), w_.dim(3));
  return grad_in;
}

std::vector<ParamRef> PlainConv::params() {
  return {{"W", &w_, &dw_, false}, {"beta", &beta_, &dbeta_, false}};
}

std::vector<std::size_t> PlainConv::output_sample_shape(const std::vector<std::size_t>& in) const {
  if (in.size() != 3) throw DimensionError("conv expects a [d,L,B] sample shape");
  return {w_.dim(0), conv_extent(in[1], pad_, w_.dim(2), stride_, "conv"),
          conv_extent(in[2], pad_, w_.dim(3), stride_, "conv")};
}

std::string PlainConv::spec_string() const {
  return "C(" + std::to_string(w_.dim(0)) + "," + std::to_string(w_.dim(2)) + "," +
         std::to_string(stride_) + "," + std::to_string(pad_) + "):plain";
}

// ---------------------------------------------------------------------------
// PoolLayer

Tensor PoolLayer::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4) {
    throw DimensionError("pool layer input must be [N,m,L,B], got " + x.shape_str());
  }
  Tensor out = kernels::pool2d(x, kernel_, stride_, pad_, mode_,
                               mode_ == kernels::PoolMode::max ? &argmax_ : nullptr);
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    cached_ = true;
  }
  return out;
}

Tensor PoolLayer::backward(const Tensor& grad_out) {
  if (!cached_) throw StateError("backward before train-mode forward on PoolLayer");
  return kernels::pool2d_backward(grad_out, in_shape_, kernel_, stride_, pad_, mode_, argmax_);
}

std::vector<std::size_t> PoolLayer::output_sample_shape(const std::vector<std::size_t>& in) const {
  if (in.size() != 3) throw DimensionError("pool expects a [m,L,B] sample shape");
  return {in[0], conv_extent(in[1], pad_, static_cast<std::size_t>(kernel_), stride_, "pool"),
          conv_extent(in[2], pad_, static_cast<std::size_t>(kernel_), stride_, "pool")};
}

std::string PoolLayer::spec_string() const {
  return "P(" + std::to_string(kernel_) + "," + std::to_string(stride_) + "," +
         std::to_string(pad_) + "," + (mode_ == kernels::PoolMode::max ? "max" : "avg") + ")";
}

// ---------------------------------------------------------------------------
// loss head

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("logits must be [N,K], got " + logits.shape_str());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor p({n, k});
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    real mx = logits(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(b, j));
    real sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      p(b, j) = std::exp(logits(b, j) - mx);
      sum += p(b, j);
    }
    for (std::size_t j = 0; j < k; ++j) p(b, j) /= sum;
  }
  return p;
}

std::pair<real, Tensor> loss_forward_backward(const Tensor& logits,
                                              const std::vector<int>& labels) {
  if (logits.rank() != 2) throw DimensionError("logits must be [N,K], got " + logits.shape_str());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DataError("label count " + std::to_string(labels.size()) + " != batch " +
                    std::to_string(n));
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw DataError("label " + std::to_string(labels[b]) + " out of range [0," +
                      std::to_string(k) + ") at sample " + std::to_string(b));
    }
  }
  Tensor grad({n, k});
  std::vector<real> sample_loss(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(n); ++b) {
    real mx = logits(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(b, j));
    real sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits(b, j) - mx);
    const real log_z = mx + std::log(sum);
    sample_loss[b] = log_z - logits(b, static_cast<std::size_t>(labels[b]));
    const real invn = real(1) / static_cast<real>(n);
    for (std::size_t j = 0; j < k; ++j) {
      const real p = std::exp(logits(b, j) - log_z);
      grad(b, j) = (p - (static_cast<std::size_t>(labels[b]) == j ? real(1) : real(0))) * invn;
    }
  }
  real loss = 0;
  for (std::size_t b = 0; b < n; ++b) loss += sample_loss[b];
  return {loss / static_cast<real>(n), std::move(grad)};
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits(b, j) > logits(b, best)) best = j;
    }
    if (static_cast<int>(best) == labels[b]) ++correct;
  }
  return correct;
}

// ---------------------------------------------------------------------------
// Network

Tensor Network::forward(const Tensor& x, Mode mode) {
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, mode);
  return cur;
}

Tensor Network::forward_collect(const Tensor& x, Mode mode, std::vector<Tensor>* layer_inputs) {
  Tensor cur = x;
  for (auto& layer : layers_) {
    if (layer_inputs) layer_inputs->push_back(cur);
    cur = layer->forward(cur, mode);
  }
  return cur;
}

Tensor Network::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (ParamRef p : layers_[i]->params()) {
      p.name = "layer" + std::to_string(i) + "." + p.name;
      out.push_back(p);
    }
  }
  return out;
}

std::string Network::spec_string() const {
  std::string s;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += "-";
    s += layers_[i]->spec_string();
  }
  return s;
}

}  // namespace normprop
