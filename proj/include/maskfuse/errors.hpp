#pragma once

#include <stdexcept>
#include <string>

namespace maskfuse {

// Malformed or out-of-range configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition was violated by the caller. CLI exit code 3.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operand shapes do not conform to an op's contract.
class ShapeError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

// NaN or infinity where a finite value is required. CLI exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace maskfuse
