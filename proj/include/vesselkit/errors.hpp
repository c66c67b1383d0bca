#pragma once

#include <stdexcept>
#include <string>

namespace vk {

// Exit-code mapping used by the CLI:
//   CheckFailure -> 1, ConfigError/FormatError -> 2, NumericError/DataError -> 3.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Metric undefined for the given data (e.g. a mask containing one class only).
class UndefinedMetricError : public DataError {
 public:
  using DataError::DataError;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Caller violated an operation precondition on the data it passed.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vk
