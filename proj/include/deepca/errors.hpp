#pragma once

#include <stdexcept>

namespace deepca {

// Shape disagreement between tensors or between an operator and its argument.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or unsupported on-disk data (DCAT/DCAC streams, configs).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Request exceeds a hard size cap (dense materialization, grid oracles).
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: singular system, diverging training loss.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss root, invalid class index, bad config field.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace deepca
