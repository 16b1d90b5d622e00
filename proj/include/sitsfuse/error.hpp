#pragma once

#include <stdexcept>
#include <string>

namespace sitsfuse {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (bad magic, truncated payload, header mismatch).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A domain invariant does not hold (non-increasing dates, unknown instance id, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An illegal experiment/model configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when the loss stops being finite.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace sitsfuse
