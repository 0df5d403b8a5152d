#pragma once
#include <stdexcept>
#include <string>

namespace qmri {

// Bad configuration or malformed input files. Maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures (backtracking cap, QP stall, SVD breakdown).
// Maps to CLI exit code 2. `residual` carries the last measured residual
// where one is available.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg, double residual = 0.0)
      : std::runtime_error(msg), residual(residual) {}
  double residual;
};

}  // namespace qmri
