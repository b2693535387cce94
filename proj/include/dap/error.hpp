#pragma once

#include <stdexcept>
#include <string>

namespace dap {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree with the operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is missing, malformed or out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset, manifest or file I/O problem.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary file does not start with the expected magic bytes.
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

/// Binary file ends before the declared payload.
class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

/// Payload contains a NaN value.
class NanPayloadError : public DataError {
 public:
  using DataError::DataError;
};

/// A map that must carry mass is zero everywhere.
class DegenerateMapError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite values or an undefined numeric quantity.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dap
