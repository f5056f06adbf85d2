#pragma once

#include <stdexcept>
#include <string>

namespace emtm {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad hyperparameter, even kernel size, sigma <= 0, ...
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input data: unparseable record, wrong payload length, unknown tag.
struct FormatError : Error {
  using Error::Error;
};

// Temporal ordering violated (t_start > t_end).
struct OrderingError : FormatError {
  using FormatError::FormatError;
};

// API contract violated by the caller (non-scalar backward loss, unordered
// IoU pair, mismatched prediction/label lists).
struct ContractError : Error {
  using Error::Error;
};

// Shape mismatch between operands.
struct DimensionError : ContractError {
  using ContractError::ContractError;
};

// Non-finite value where the training loop requires a finite one.
struct NumericalError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, short read).
struct IoError : Error {
  using Error::Error;
};

}  // namespace emtm
