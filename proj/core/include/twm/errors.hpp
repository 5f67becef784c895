#pragma once

#include <stdexcept>
#include <string>

namespace twm {

/// Invalid shapes, sizes or hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation was called in a state where it is not allowed.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or infinity appeared in a forward result or a gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset-level failures: not enough entries, capacity exhausted, bad files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twm
