// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_CONFIG_HPP
#define NORMPROP_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normprop/data.hpp"
#include "normprop/layers.hpp"
#include "normprop/rng.hpp"
#include "normprop/train.hpp"

namespace normprop {

enum class NormKind { normprop, batchnorm, plain };

std::string to_string(NormKind k);
NormKind parse_norm_kind(const std::string& token);
std::string to_string(DataNormMode m);
DataNormMode parse_data_norm(const std::string& token);
kernels::PoolMode parse_pool_mode(const std::string& token);

/// One layer in the architecture shorthand:
///   C(filters,size,stride,pad)  convolution (square kernels)
///   P(kernel,stride,pad,mode)   pooling, mode max|avg
///   D(units)                    dense
/// An optional ":normprop|:batchnorm|:plain" suffix pins the normalization
/// of that layer; without it the config-wide default applies (and the final
/// weighted layer falls back to a plain linear classifier head).
struct LayerSpec {
  enum class Kind { conv, pool, dense };
  Kind kind = Kind::dense;
  int units = 0;                 // dense
  int filters = 0, size = 0;     // conv
  int kernel = 0;                // pool
  int stride = 1, pad = 0;       // conv/pool
  kernels::PoolMode pool_mode = kernels::PoolMode::max;
  std::optional<NormKind> norm;  // explicit per-layer override

  static LayerSpec parse(const std::string& text);
  std::string render() const;

  bool operator==(const LayerSpec&) const = default;
};

enum class GammaInit { jacobian, one };

/// Flat key=value experiment description with repeated `layer=` lines in
/// order. parse(render(parse(text))) == parse(text).
struct ExperimentConfig {
  std::vector<LayerSpec> layers;

  NormKind norm = NormKind::normprop;
  DataNormMode data_norm = DataNormMode::global;
  std::string act = "relu";  // relu | prelu(a) | tanh | identity
  GammaInit gamma_init = GammaInit::jacobian;

  std::uint64_t seed = 1;
  int batch_size = 50;
  int epochs = 30;
  int halve_every = 10;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double running_decay = 0.99;
  bool constrain_output = false;
  std::string out_dir = "out";

  // data source
  std::string data = "synth";  // synth | idx | csv | cifar10
  std::string synth_task = "two_class";  // two_class | mixture
  int synth_n = 2000;
  int synth_dim = 16;
  int synth_classes = 2;
  int eval_n = 500;
  std::vector<std::size_t> data_shape;  // optional sample reshape, e.g. 1,8,8
  std::string data_images, data_labels;  // idx
  std::string eval_images, eval_labels;  // idx eval split (optional)
  std::string data_path;                 // csv / cifar10
  std::string label_column = "label";    // csv

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig parse_file(const std::string& path);
  std::string render() const;
  /// FNV-1a of the canonical rendering.
  std::uint64_t hash() const;
  /// Checks referenced files exist and the layer stack is non-empty.
  void validate() const;

  Activation activation() const;
  /// Per-layer normalization with defaults applied: explicit overrides win,
  /// the final weighted layer falls back to plain, everything else takes the
  /// config-wide `norm`.
  std::vector<NormKind> resolved_norms() const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Builds the layer stack with normalized initialization, zero biases and
/// the configured gamma policy. The weight stream derives from cfg.seed only.
Network build_network(const ExperimentConfig& cfg, const std::vector<std::size_t>& sample_shape,
                      int num_classes);

/// Loads (train, eval) datasets per the config's data source. Synthetic sets
/// derive their seeds from cfg.seed with distinct fixed streams.
std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg);

TrainOptions train_options(const ExperimentConfig& cfg);

}  // namespace normprop

#endif
