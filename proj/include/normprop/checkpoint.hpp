// SPDX-License-Identifier: Apache-2.0
#ifndef NORMPROP_CHECKPOINT_HPP
#define NORMPROP_CHECKPOINT_HPP

#include <string>

#include "normprop/layers.hpp"
#include "normprop/train.hpp"

namespace normprop {

/// Versioned binary container: magic "NPCK", format version, epoch counter,
/// RNG state, frozen data-normalization statistics, every layer parameter,
/// optimizer velocities and per-layer batch-norm running estimates. Floats
/// are stored as raw IEEE-754 bits, so a save/load round trip is bit-exact.
void save_checkpoint(const std::string& path, Network& net, const OptimizerState& opt,
                     const EvalNormalizer& normalizer, int epoch, const std::string& rng_state);

struct CheckpointMeta {
  int epoch = 0;
  std::string rng_state;
};

/// Restores into an already-built network of the same architecture.
CheckpointMeta load_checkpoint(const std::string& path, Network& net, OptimizerState& opt,
                               EvalNormalizer& normalizer);

}  // namespace normprop

#endif
