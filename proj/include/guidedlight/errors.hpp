#pragma once

#include <stdexcept>
#include <string>

namespace guidedlight {

// Invalid configuration or input files. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric or runtime failure during simulation/training. CLI exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (masked action, invalid plan, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

}  // namespace guidedlight
