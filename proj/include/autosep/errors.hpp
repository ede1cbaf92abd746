#pragma once

#include <stdexcept>
#include <string>

namespace autosep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition violated by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (manifests, images, descriptions).
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingDescription : public DataError {
 public:
  using DataError::DataError;
};

/// A backend call failed after exhausting its retry budget, or failed
/// with a non-retryable error.
class BackendError : public Error {
 public:
  using Error::Error;
};

class DescribeFailed : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Thrown by a Backend implementation for a single failed attempt that
/// is worth retrying (transport failure, rate limit, empty output).
class TransientError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Correlation requested on a series with zero variance.
class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

}  // namespace autosep
