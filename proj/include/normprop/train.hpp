// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_TRAIN_HPP
#define NORMPROP_TRAIN_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "normprop/analysis.hpp"
#include "normprop/data.hpp"
#include "normprop/layers.hpp"
#include "normprop/rng.hpp"
#include "normprop/tensor.hpp"

namespace normprop {

/// SGD with momentum. Update rule (decay folded into the gradient term):
///   v <- momentum * v - lr * (grad + weight_decay * param)
///   param <- param + v
struct OptimizerState {
  real lr = real(0.05);
  real momentum = real(0.9);
  real weight_decay = real(0.0005);
  std::vector<Tensor> velocity;  // parallel to the walked params, lazily sized

  OptimizerState() = default;
  OptimizerState(real lr_, real momentum_, real weight_decay_)
      : lr(lr_), momentum(momentum_), weight_decay(weight_decay_) {
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  }
};

/// Halve the learning rate every `halve_every` epochs.
struct Schedule {
  real initial_lr = real(0.05);
  int halve_every = 10;

  /// Learning rate for the 0-based epoch index: initial / 2^floor(e/halve).
  real lr_at(int epoch) const {
    if (halve_every < 1) throw ConfigError("halve_every must be >= 1");
    return initial_lr * std::pow(real(0.5), static_cast<real>(epoch / halve_every));
  }
};

/// One optimizer step over the walked parameters. A non-finite gradient
/// entry aborts with a divergence error naming the parameter.
void sgd_step(const std::vector<ParamRef>& params, OptimizerState& state);

/// Rescales every row/filter of the unit_rows-flagged tensors to unit l2
/// norm. Applied after every training iteration; a forward pass before and
/// after is identical because the normalized layers are scale invariant.
void apply_l2_constraint(const std::vector<ParamRef>& params);

/// Normalized (Glorot) initialization: uniform on
/// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
/// Dense [m,n]: fan_in = n, fan_out = m. Conv [m,d,h,w]: fan_in = d*h*w,
/// fan_out = m*h*w.
Tensor init_weights(const std::vector<std::size_t>& shape, std::uint64_t seed);
Tensor init_weights(const std::vector<std::size_t>& shape, Rng& rng);

enum class DataNormMode { global, batch };

/// Frozen normalization statistics for the validation/test path: the global
/// dataset estimate, a running-estimate snapshot, or nothing (raw features).
struct EvalNormalizer {
  enum class Kind { none, global, running } kind = Kind::none;
  std::optional<DatasetStats> global;
  std::optional<RunningStats> running;

  Tensor normalize(const Tensor& x) const;

  static EvalNormalizer none_() { return {}; }
  static EvalNormalizer from_global(DatasetStats s);
  static EvalNormalizer from_running(RunningStats s);
};

struct TrainOptions {
  int epochs = 30;
  int batch_size = 50;
  Schedule schedule;
  real momentum = real(0.9);
  real weight_decay = real(0.0005);
  DataNormMode data_norm = DataNormMode::global;
  real running_decay = real(0.99);
  std::uint64_t seed = 1;
  bool constrain_output_layer = false;  // the classifier head is not "hidden"
  std::string out_dir;                  // when set: checkpoint.bin after each epoch
  int probe_size = 2048;                // shift-monitor probe subset of the eval set
};

struct EpochMetrics {
  int epoch = 0;  // 1-based display epoch
  real lr = 0;
  real train_loss = 0;
  real train_acc = 0;
  real eval_acc = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  EvalNormalizer normalizer;  // frozen stats for later evaluation
  real final_eval_acc = 0;
};

/// Called once per epoch with the display epoch, the network and the probe
/// subset normalized with the statistics in force at that point (the shift
/// monitor feeds on this).
using EpochHook = std::function<void(int epoch, Network& net, const Tensor& probe)>;

/// Epoch loop: seeded shuffle, per-batch (data-normalize | forward | loss |
/// backward | sgd | l2 constraint), per-epoch metrics + monitor hook.
/// A non-finite loss aborts with a divergence error; the checkpoint written
/// at the end of the previous epoch (when out_dir is set) is left intact.
TrainResult train(Network& net, const Dataset& train_set, const Dataset& eval_set,
                  const TrainOptions& opts, const EpochHook& hook = nullptr);

struct EvalResult {
  real accuracy = 0;
  real loss = 0;
};

/// Normalizes every sample with the frozen statistics and forwards in eval
/// mode. Chunking never changes the result: no eval path couples samples.
EvalResult evaluate(Network& net, const Dataset& dataset, const EvalNormalizer& normalizer);

}  // namespace normprop

#endif
