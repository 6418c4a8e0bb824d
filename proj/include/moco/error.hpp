#pragma once

#include <stdexcept>
#include <string>

namespace moco {

// Bad input data: non-finite values, out-of-range indices, inconsistent
// files. Maps to CLI exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between two inputs.
struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};

// Input is well-formed but carries no usable information (constant image,
// empty foreground, zero reference energy).
struct DegenerateInputError : ValidationError {
  using ValidationError::ValidationError;
};

// Failure while reading or writing an artifact; the message names the path.
struct IoError : ValidationError {
  using ValidationError::ValidationError;
};

// Divergence, singular systems and similar. Maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace moco
