// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_DATA_HPP
#define NORMPROP_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "normprop/tensor.hpp"

namespace normprop {

inline constexpr real kStdFloor = real(1e-8);

struct Dataset {
  Tensor features;                         // [N, D], row per sample
  std::vector<int> labels;                 // size N; empty when unlabeled
  int num_classes = 0;
  std::vector<std::size_t> sample_shape;   // {D} or {d,L,B} for image data

  std::size_t size() const { return features.empty() ? 0 : features.dim(0); }
  std::size_t feature_dim() const { return features.empty() ? 0 : features.dim(1); }
};

/// Whole-dataset per-feature statistics (population divisor N). Standard
/// deviations are floored at kStdFloor; floored features are flagged.
struct DatasetStats {
  Tensor mean;    // [D]
  Tensor stddev;  // [D], >= kStdFloor
  std::size_t count = 0;
  std::vector<std::uint8_t> floored;  // per-feature: stddev hit the floor
};

/// Streaming per-feature mean/variance estimate (exponential moving average).
/// The first update copies the batch statistics; later updates blend with
/// weight (1 - decay). Single-writer.
struct RunningStats {
  Tensor mean;  // [D]
  Tensor var;   // [D], >= 0
  real decay = real(0.99);
  std::size_t steps = 0;

  RunningStats() = default;
  explicit RunningStats(std::size_t dim, real decay_ = real(0.99))
      : mean({dim}), var(Tensor::full({dim}, real(1))), decay(decay_) {}

  void update(const Tensor& batch_mean, const Tensor& batch_var);
  Tensor stddev_floored() const;
};

DatasetStats fit_global_stats(const Dataset& dataset);
DatasetStats fit_global_stats(const Tensor& features);

/// (x - mean) / stddev elementwise per feature.
Tensor apply_normalization(const Tensor& x, const DatasetStats& stats);

/// Normalizes a mini-batch by its own per-feature mean/std (floored) and
/// folds those statistics into. the running estimate. Requires batch >= 2;
/// a single-sample batch is an error directing the caller to global data
/// normalization.
Tensor batch_normalize_data(const Tensor& batch, RunningStats& running);

/// Normalization with frozen running statistics (validation/test path).
Tensor apply_running_normalization(const Tensor& x, const RunningStats& running);

enum class SynthTask { two_class_linear, k_class_mixture };

/// Seed-deterministic synthetic datasets.
///
/// two_class_linear: labels alternate 0/1; with unit direction
/// u = (1,...,1)/sqrt(dim) and sign s = +1 for label 1, -1 for label 0, a
/// sample is x = s*(1 + |g0|)*u + (g - (u.g)u) with g ~ N(0,I), g0 ~ N(0,1).
/// The classes are linearly separable with margin 2 along u; class-
/// conditional mean is +-(1 + sqrt(2/pi))*u.
///
/// k_class_mixture: label c = i mod k, x ~ N(3*e_{c mod dim}, I).
Dataset synth_gaussian(std::size_t n, std::size_t dim, std::uint64_t seed, SynthTask task,
                       int k = 2);

/// IDX (big-endian) loaders. Magic 0x00000803 for image files, 0x00000801
/// for label files; malformed or truncated files raise a format error with
/// the byte offset.
Dataset load_idx(const std::string& images_path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// CSV with a header row; the named column provides integer labels, every
/// other column a feature.
Dataset load_csv(const std::string& path, const std::string& label_column);

/// CIFAR-10 raw binary: 3073-byte records, label byte + 3072 pixel bytes.
Dataset load_cifar10(const std::string& path);

}  // namespace normprop

#endif
