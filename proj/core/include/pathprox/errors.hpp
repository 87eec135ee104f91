#pragma once

#include <stdexcept>
#include <string>

namespace pathprox {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes that do not conform (layer wiring, tensor ops, checkpoint payloads).
struct DimensionError : Error {
  using Error::Error;
};

// Bad user-facing configuration: malformed config files, invalid hyperparameters,
// inconsistent experiment setups.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed binary or JSON artifacts on disk. Carries a byte offset when known.
struct FormatError : Error {
  explicit FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset(offset) {}
  long long offset;
};

// Out-of-range unit, group, layer, or label indices.
struct IndexError : Error {
  using Error::Error;
};

// API misuse that violates a documented precondition (e.g. non-scalar backward root).
struct ContractError : Error {
  using Error::Error;
};

// Inputs on which the requested operation is mathematically undefined
// (e.g. projecting a zero vector with no fallback direction).
struct DegenerateInputError : Error {
  using Error::Error;
};

// Training produced a non-finite loss or metric; runs abort with this.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace pathprox
