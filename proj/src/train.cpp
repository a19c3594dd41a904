// SPDX-License-Identifier: Apache-2.0
#include "normprop/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "normprop/checkpoint.hpp"
#include "normprop/errors.hpp"

namespace normprop {

void sgd_step(const std::vector<ParamRef>& params, OptimizerState& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const ParamRef& p : params) state.velocity.emplace_back(p.value->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw StateError("optimizer state does not match parameter count");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    Tensor& v = state.velocity[k];
    if (!v.same_shape(*p.value) || !p.grad->same_shape(*p.value)) {
      throw DimensionError("optimizer shape mismatch on " + p.name);
    }
    real* pv = v.data();
    real* pp = p.value->data();
    const real* pg = p.grad->data();
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(pg[i])) {
        throw DivergenceError("non-finite gradient in " + p.name);
      }
      pv[i] = state.momentum * pv[i] - state.lr * (pg[i] + state.weight_decay * pp[i]);
      pp[i] += pv[i];
      if (!std::isfinite(pp[i])) {
        throw DivergenceError("parameter overflow in " + p.name);
      }
    }
  }
}

void apply_l2_constraint(const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params) {
    if (!p.unit_rows) continue;
    Tensor& w = *p.value;
    const std::size_t m = w.dim(0);
    const std::size_t row = w.size() / m;
    real* pw = w.data();
    const Tensor norms = kernels::row_l2_norms(w);
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::isfinite(norms[i])) {
        throw DivergenceError(p.name + " row " + std::to_string(i) +
                              " has a non-finite norm; training diverged");
      }
      if (!(norms[i] > kNormFloor)) {
        throw NormalizationError(p.name + " row " + std::to_string(i) +
                                 " has zero norm; cannot rescale to unit length");
      }
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
      for (std::size_t j = 0; j < row; ++j) pw[i * row + j] /= norms[i];
    }
  }
}

Tensor init_weights(const std::vector<std::size_t>& shape, std::uint64_t seed) {
  Rng rng(seed);
  return init_weights(shape, rng);
}

Tensor init_weights(const std::vector<std::size_t>& shape, Rng& rng) {
  std::size_t fan_in, fan_out;
  if (shape.size() == 2) {
    fan_out = shape[0];
    fan_in = shape[1];
  } else if (shape.size() == 4) {
    fan_in = shape[1] * shape[2] * shape[3];
    fan_out = shape[0] * shape[2] * shape[3];
  } else {
    throw DimensionError("weight init expects [m,n] or [m,d,h,w], got " +
                         Tensor::shape_string(shape));
  }
  const real bound = std::sqrt(real(6) / static_cast<real>(fan_in + fan_out));
  Tensor w(shape);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<real>(rng.uniform(-bound, bound));
  }
  return w;
}

Tensor EvalNormalizer::normalize(const Tensor& x) const {
  switch (kind) {
    case Kind::none:
      return x;
    case Kind::global:
      if (!global) throw ConfigError("global data normalization selected but no statistics set");
      return apply_normalization(x, *global);
    case Kind::running:
      if (!running) throw ConfigError("batch data normalization selected but no running estimate");
      return apply_running_normalization(x, *running);
  }
  return x;
}

EvalNormalizer EvalNormalizer::from_global(DatasetStats s) {
  EvalNormalizer n;
  n.kind = Kind::global;
  n.global = std::move(s);
  return n;
}

EvalNormalizer EvalNormalizer::from_running(RunningStats s) {
  EvalNormalizer n;
  n.kind = Kind::running;
  n.running = std::move(s);
  return n;
}

namespace {

Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& idx,
                   std::size_t lo, std::size_t hi) {
  const std::size_t d = features.dim(1);
  Tensor out({hi - lo, d});
  for (std::size_t r = lo; r < hi; ++r) {
    const real* src = features.data() + idx[r] * d;
    std::copy(src, src + d, out.data() + (r - lo) * d);
  }
  return out;
}

bool network_has_batchnorm(Network& net) {
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (dynamic_cast<BatchNormDense*>(&net.layer(i)) != nullptr) return true;
  }
  return false;
}

// Reshape [B,D] features to the sample shape the network expects.
Tensor shape_batch(const Tensor& flat, const std::vector<std::size_t>& sample_shape) {
  if (sample_shape.size() <= 1) return flat;
  std::vector<std::size_t> full{flat.dim(0)};
  full.insert(full.end(), sample_shape.begin(), sample_shape.end());
  return flat.reshaped(full);
}

}  // namespace

TrainResult train(Network& net, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& opts, const EpochHook& hook) {
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (train_set.labels.empty()) throw DataError("training set has no labels");
  if (opts.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (opts.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (network_has_batchnorm(net) && opts.batch_size < 2) {
    throw ConfigError(
        "batch normalization is inapplicable with batch size 1: train-mode statistics need "
        "at least 2 samples per batch");
  }
  if (opts.data_norm == DataNormMode::batch && opts.batch_size < 2) {
    throw ConfigError(
        "batch data normalization needs batch size >= 2; use global data normalization for "
        "batch size 1");
  }

  Rng rng(opts.seed);
  const std::size_t n = train_set.size();
  const std::size_t batch_size = static_cast<std::size_t>(opts.batch_size);

  // data normalization setup
  std::optional<DatasetStats> global_stats;
  std::optional<RunningStats> running;
  Tensor train_features = train_set.features;
  if (opts.data_norm == DataNormMode::global) {
    global_stats = fit_global_stats(train_set.features);
    train_features = apply_normalization(train_set.features, *global_stats);
  } else {
    running = RunningStats(train_set.feature_dim(), opts.running_decay);
  }

  const std::size_t probe_n =
      std::min<std::size_t>(static_cast<std::size_t>(opts.probe_size),
                            eval_set.size() > 0 ? eval_set.size() : train_set.size());
  const Tensor& probe_source = eval_set.size() > 0 ? eval_set.features : train_set.features;
  Tensor probe_raw({probe_n, probe_source.dim(1)});
  std::copy(probe_source.data(), probe_source.data() + probe_n * probe_source.dim(1),
            probe_raw.data());

  OptimizerState opt(opts.schedule.initial_lr, opts.momentum, opts.weight_decay);
  std::vector<ParamRef> params = net.params();
  if (!opts.constrain_output_layer && net.layer_count() > 0) {
    // the classifier head is not a hidden layer; leave its rows unconstrained
    const std::string last_prefix = "layer" + std::to_string(net.layer_count() - 1) + ".";
    for (ParamRef& p : params) {
      if (p.name.rfind(last_prefix, 0) == 0) p.unit_rows = false;
    }
  }

  TrainResult result;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    opt.lr = opts.schedule.lr_at(epoch);
    rng.shuffle(order);

    real loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
      std::size_t hi = std::min(n, lo + batch_size);
      if (batch_size >= 2 && hi - lo < 2) break;  // drop a trailing 1-sample remainder
      Tensor xb = gather_rows(train_features, order, lo, hi);
      if (opts.data_norm == DataNormMode::batch) {
        xb = batch_normalize_data(xb, *running);
      }
      std::vector<int> yb(hi - lo);
      for (std::size_t r = lo; r < hi; ++r) yb[r - lo] = train_set.labels[order[r]];

      Tensor logits = net.forward(shape_batch(xb, train_set.sample_shape), Mode::train);
      auto [loss, dlogits] = loss_forward_backward(logits, yb);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training loss became non-finite at epoch " +
                              std::to_string(epoch + 1) +
                              "; last checkpoint retained" );
      }
      loss_sum += loss * static_cast<real>(hi - lo);
      correct += count_correct(logits, yb);
      seen += hi - lo;

      net.backward(dlogits);
      sgd_step(params, opt);
      apply_l2_constraint(params);
    }

    EvalNormalizer normalizer;
    if (opts.data_norm == DataNormMode::global) {
      normalizer = EvalNormalizer::from_global(*global_stats);
    } else {
      normalizer = EvalNormalizer::from_running(*running);
    }
    const Dataset& eval_ds = eval_set.size() > 0 ? eval_set : train_set;
    const EvalResult ev = evaluate(net, eval_ds, normalizer);

    EpochMetrics row;
    row.epoch = epoch + 1;
    row.lr = opt.lr;
    row.train_loss = seen ? loss_sum / static_cast<real>(seen) : real(0);
    row.train_acc = seen ? static_cast<real>(correct) / static_cast<real>(seen) : real(0);
    row.eval_acc = ev.accuracy;
    result.history.push_back(row);
    result.normalizer = normalizer;
    result.final_eval_acc = ev.accuracy;

    if (hook) {
      // probe normalized with the statistics in force after this epoch
      Tensor probe = normalizer.kind == EvalNormalizer::Kind::global
                         ? apply_normalization(probe_raw, *normalizer.global)
                         : apply_running_normalization(probe_raw, *normalizer.running);
      hook(epoch + 1, net, shape_batch(probe, train_set.sample_shape));
    }

    if (!opts.out_dir.empty()) {
      std::filesystem::create_directories(opts.out_dir);
      save_checkpoint(opts.out_dir + "/checkpoint.bin", net, opt, normalizer, epoch + 1,
                      rng.serialize());
    }
  }
  return result;
}

EvalResult evaluate(Network& net, const Dataset& dataset, const EvalNormalizer& normalizer) {
  if (dataset.size() == 0) throw DataError("evaluation set is empty");
  if (dataset.labels.empty()) throw DataError("evaluation set has no labels");
  const std::size_t n = dataset.size();
  constexpr std::size_t kChunk = 512;
  real loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    Tensor xb({hi - lo, dataset.feature_dim()});
    std::copy(dataset.features.data() + lo * dataset.feature_dim(),
              dataset.features.data() + hi * dataset.feature_dim(), xb.data());
    xb = normalizer.normalize(xb);
    std::vector<int> yb(dataset.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                        dataset.labels.begin() + static_cast<std::ptrdiff_t>(hi));
    Tensor logits = net.forward(shape_batch(xb, dataset.sample_shape), Mode::eval);
    auto [loss, grad] = loss_forward_backward(logits, yb);
    (void)grad;
    loss_sum += loss * static_cast<real>(hi - lo);
    correct += count_correct(logits, yb);
  }
  EvalResult r;
  r.accuracy = static_cast<real>(correct) / static_cast<real>(n);
  r.loss = loss_sum / static_cast<real>(n);
  return r;
}

}  // namespace normprop
