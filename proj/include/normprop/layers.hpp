// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_LAYERS_HPP
#define NORMPROP_LAYERS_HPP

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "normprop/activation.hpp"
#include "normprop/data.hpp"
#include "normprop/kernels.hpp"
#include "normprop/tensor.hpp"

namespace normprop {

enum class Mode { train, eval };

/// Weight-row norms below this floor are a hard error, never silently
/// clamped.
inline constexpr real kNormFloor = real(1e-12);

/// Handle the optimizer and the l2 constraint use to walk a layer's
/// parameters. `unit_rows` marks tensors whose leading-axis rows are
/// rescaled to unit norm after every step.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
  bool unit_rows = false;
};

/// Forward/backward computation unit. A layer instance is single-writer:
/// train-mode forward caches what backward consumes, so forward/backward on
/// one instance must not run concurrently. Eval-mode forward on a frozen
/// layer is safe from many threads.
class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Gradients of the full normalized expression; requires a prior
  /// train-mode forward.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::vector<std::size_t> output_sample_shape(
      const std::vector<std::size_t>& in) const = 0;
  /// Config shorthand, e.g. "D(64):normprop".
  virtual std::string spec_string() const = 0;
};

/// Dense layer with parametric normalization:
///   o_i = (1/c1) * [ act( gamma_i * (W_i . x) / ||W_i||_2 + beta_i ) - c2 ]
/// Every normalization term (including the row norm) participates in the
/// gradient, and the output is invariant to positive rescaling of any row.
class NormPropDense : public Layer {
public:
  NormPropDense(Tensor w, ActivationStats stats, Activation act, real gamma_init = 1);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>&) const override {
    return {units()};
  }
  std::string spec_string() const override {
    return "D(" + std::to_string(units()) + "):normprop";
  }

  std::size_t units() const { return w_.dim(0); }
  std::size_t input_dim() const { return w_.dim(1); }
  const Tensor& weights() const { return w_; }
  Tensor& weights() { return w_; }
  const Tensor& gamma() const { return gamma_; }
  Tensor& gamma() { return gamma_; }
  const Tensor& beta() const { return beta_; }
  Tensor& beta() { return beta_; }
  const ActivationStats& stats() const { return stats_; }
  const Activation& activation() const { return act_; }

private:
  Tensor w_;             // [m,n]
  Tensor gamma_, beta_;  // [m]
  ActivationStats stats_;
  Activation act_;

  Tensor dw_, dgamma_, dbeta_;
  // train-mode cache
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  Tensor x_, u_, z_, row_norms_;
};

/// Convolutional counterpart; the per-filter Frobenius norm plays the role
/// of the row norm and gamma_i/beta_i broadcast over all spatial positions
/// of feature map i.
class NormPropConv : public Layer {
public:
  NormPropConv(Tensor filters, int stride, int pad, ActivationStats stats, Activation act,
               real gamma_init = 1);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>& in) const override;
  std::string spec_string() const override;

  const Tensor& filters() const { return w_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

private:
  Tensor w_;  // [m,d,h,w]
  int stride_, pad_;
  Tensor gamma_, beta_;
  ActivationStats stats_;
  Activation act_;

  Tensor dw_, dgamma_, dbeta_;
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  Tensor x_, v_, z_, row_norms_;
};

/// Batch Normalization baseline (dense): u = Wx normalized per unit by
/// mini-batch mean/variance in train mode, by running estimates in eval
/// mode. Train mode requires batch >= 2.
class BatchNormDense : public Layer {
public:
  BatchNormDense(Tensor w, Activation act, real running_decay = real(0.99),
                 real eps = real(1e-5));

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>&) const override {
    return {w_.dim(0)};
  }
  std::string spec_string() const override {
    return "D(" + std::to_string(w_.dim(0)) + "):batchnorm";
  }

  RunningStats& running() { return running_; }
  const RunningStats& running() const { return running_; }
  real eps() const { return eps_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

private:
  Tensor w_;             // [m,n]
  Tensor gamma_, beta_;  // [m]
  RunningStats running_;
  real eps_;
  Activation act_;

  Tensor dw_, dgamma_, dbeta_;
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  Tensor x_, uhat_, inv_std_, z_;
};

/// Unnormalized dense layer: o = act(Wx + beta).
class PlainDense : public Layer {
public:
  PlainDense(Tensor w, Activation act);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>&) const override {
    return {w_.dim(0)};
  }
  std::string spec_string() const override {
    return "D(" + std::to_string(w_.dim(0)) + "):plain";
  }

  const Activation& activation() const { return act_; }

private:
  Tensor w_;
  Tensor beta_;
  Activation act_;
  Tensor dw_, dbeta_;
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  Tensor x_, z_;
};

/// Unnormalized conv layer: o = act(W * x + beta).
class PlainConv : public Layer {
public:
  PlainConv(Tensor filters, int stride, int pad, Activation act);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>& in) const override;
  std::string spec_string() const override;

private:
  Tensor w_;
  int stride_, pad_;
  Tensor beta_;
  Activation act_;
  Tensor dw_, dbeta_;
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  Tensor x_, z_;
};

/// Spatial pooling. Post-activation statistics are deliberately not
/// recomputed after pooling.
class PoolLayer : public Layer {
public:
  PoolLayer(int kernel, int stride, int pad, kernels::PoolMode mode)
      : kernel_(kernel), stride_(stride), pad_(pad), mode_(mode) {}

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<std::size_t> output_sample_shape(const std::vector<std::size_t>& in) const override;
  std::string spec_string() const override;

private:
  int kernel_, stride_, pad_;
  kernels::PoolMode mode_;
  bool cached_ = false;
  std::vector<std::size_t> in_shape_;
  std::vector<std::int64_t> argmax_;
};

/// Softmax cross-entropy head: mean loss over the batch and
/// d(loss)/d(logits) = (softmax - onehot)/batch.
std::pair<real, Tensor> loss_forward_backward(const Tensor& logits,
                                              const std::vector<int>& labels);

/// Row-major softmax probabilities (rows sum to 1 within 1e-12).
Tensor softmax(const Tensor& logits);

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels);

/// Ordered layer stack.
class Network {
public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& x, Mode mode);
  /// Forward that also records the input seen by every layer (used by the
  /// covariate-shift monitor).
  Tensor forward_collect(const Tensor& x, Mode mode, std::vector<Tensor>* layer_inputs);
  Tensor backward(const Tensor& grad_out);

  std::vector<ParamRef> params();
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  std::string spec_string() const;

private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace normprop

#endif
