// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uformer {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (model, STFT, training, CLI config file).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or unusable numerical state.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Corrupt or incompatible serialized file.
class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail
}  // namespace uformer
