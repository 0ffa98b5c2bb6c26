#pragma once

#include <stdexcept>
#include <string>

namespace qpat {

/// Invalid or inconsistent user input (config files, mesh files, bad arguments).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (factorization breakdown, non-finite intermediates, divergence).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qpat
