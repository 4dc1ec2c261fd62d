#pragma once

#include <stdexcept>
#include <string>

namespace dcs {

// Invalid configuration or hyperparameters (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Vector/operator dimensions disagree, or an argument is NaN / out of domain.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Diffusion step index outside [0, T] (or [1, T] for reverse steps).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Conditional posterior has a singular covariance.
class DegeneratePosteriorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Output could not be written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_dim(long got, long expected, const char* what) {
  if (got != expected) {
    throw ArgumentError(std::string(what) + ": dimension mismatch (got " + std::to_string(got) +
                        ", expected " + std::to_string(expected) + ")");
  }
}

}  // namespace detail
}  // namespace dcs
