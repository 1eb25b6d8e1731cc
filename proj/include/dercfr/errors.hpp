#pragma once

#include <stdexcept>
#include <string>

namespace dercfr {

// Shape or argument contract broken by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced or consumed by a numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, training or generator configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs that leave a statistic undefined (empty group, zero weights, ...).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dercfr
