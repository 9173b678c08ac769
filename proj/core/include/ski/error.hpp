#pragma once

#include <stdexcept>
#include <string>

namespace ski {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Zero vectors, empty sequences and other inputs with no meaningful result.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ski
