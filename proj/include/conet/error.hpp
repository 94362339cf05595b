#pragma once

#include <stdexcept>
#include <string>

namespace conet {

// Each error family maps onto one CLI exit code (see tools/conet.cpp).

/// Invalid model/training configuration or incompatible artifacts.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed, or insufficient input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or gradient checking.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace conet
