#pragma once

#include <stdexcept>
#include <string>

namespace mat {

// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents; the message names the offending shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable input data (CSV rows, splits, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, consumed tape, operands from different tapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace mat
