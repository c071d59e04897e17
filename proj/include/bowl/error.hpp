#pragma once

#include <stdexcept>
#include <string>

namespace bowl {

// Incompatible tensor or layer shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Zero-norm vectors, empty sets and other inputs a score is undefined on.
struct DegenerateInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed BNT1 container or dataset file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or parameters; aborts a run.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid or incomplete run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bowl
