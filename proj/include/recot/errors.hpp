#pragma once

#include <stdexcept>
#include <string>

namespace recot {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse (calling an operation outside its precondition).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN / Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace recot
