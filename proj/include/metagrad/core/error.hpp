#pragma once

#include <stdexcept>
#include <string>

namespace metagrad {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration or argument violates its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data or on-disk artifacts are missing, corrupt or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values (e.g. training divergence).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace metagrad
