#pragma once

#include <stdexcept>
#include <string>

namespace emotrack {

// Error categories map one-to-one onto CLI exit codes.

/// Invalid configuration or usage (exit 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (exit 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or failed numeric checks (exit 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emotrack
