#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fhvae {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Base class for all errors raised by the toolkit. `kind()` is a stable,
/// machine-parsable error class used by the CLI.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "ConfigError"; }
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "ContractError"; }
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "EmptyInputError"; }
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "IoError"; }
};

/// Malformed, truncated or version-mismatched file contents.
class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "FormatError"; }
};

/// Non-finite values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "NumericalError"; }
};

// Warnings go to stderr unless silenced; the counter is always updated so
// tests can observe them.
void warn(const std::string& message);
std::uint64_t warning_count() noexcept;
void set_warnings_quiet(bool quiet) noexcept;

inline void require(bool cond, const std::string& message) {
  if (!cond) throw ContractError(message);
}

}  // namespace fhvae
