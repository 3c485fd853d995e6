#pragma once

#include <stdexcept>
#include <string>

namespace fsq {

/// Base class for every error raised by the library. The concrete subclass
/// names the failure category; the CLI maps categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that disagree or are malformed.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Pearson correlation requested for a series with zero variance.
class UndefinedCorrelationError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Invalid hyperparameters or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Parameter tensors inconsistent with the layer they feed.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// An operation called out of order (e.g. backward without a retained forward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad labels, empty datasets and similar input-data problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// An image file that cannot be decoded.
class DecodeError : public DataError {
 public:
  using DataError::DataError;
};

/// Checkpoint with the wrong magic, version or an unparseable layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint whose CRC does not match its contents.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint or dataset that does not match the configuration it is used with.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsq
