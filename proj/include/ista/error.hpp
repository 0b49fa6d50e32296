#pragma once

#include <stdexcept>
#include <string>

namespace ista {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a domain invariant (non-finite entry, bad size).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow its binary or text format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Caller passed inconsistent arguments (dimension or layout mismatch).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A model fit could not be performed on the given data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Requested object would exceed a size guard.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Retrieval evaluation is undefined for the given input.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A stage prerequisite file or directory does not exist.
class MissingInputError : public IoError {
 public:
  using IoError::IoError;
};

/// Pipeline configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ista
