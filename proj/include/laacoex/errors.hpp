#pragma once

#include <stdexcept>
#include <string>

namespace laacoex {

// Raised for malformed configuration, bad CLI arguments, or inconsistent
// inputs. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when the inference loop hits a state it cannot recover from
// (degenerate rewards, message underflow, nonpositive posterior parameters).
// The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace laacoex
