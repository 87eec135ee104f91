#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "pathprox/network.hpp"
#include "pathprox/optimizers.hpp"

namespace pathprox {

// Mid-run state carried alongside the weights so a resumed run continues the
// exact trajectory (batch addressing is stateless in the iteration number).
struct TrainingState {
  std::size_t iteration = 0;  // last completed iteration
  FrozenMask frozen;
};

// Writes a JSON checkpoint: architecture descriptor, per-layer weights and
// biases (exact double round-trip), the init seed, the store version counter,
// and optionally the training state. Refuses non-finite weights.
void save_checkpoint(const std::string& path, const NetworkSpec& spec, const WeightStore& store,
                     std::uint64_t seed, const TrainingState* training = nullptr);

struct Checkpoint {
  WeightStore store;
  std::uint64_t seed = 0;
  std::optional<TrainingState> training;
};

// Reads a checkpoint written by save_checkpoint. The stored architecture must
// match `spec` exactly (ConfigError otherwise); malformed files raise
// FormatError, mismatched tensor shapes DimensionError.
Checkpoint load_checkpoint(const std::string& path, const NetworkSpec& spec);

}  // namespace pathprox
