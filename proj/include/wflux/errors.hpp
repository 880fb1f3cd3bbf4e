#pragma once

#include <stdexcept>

namespace wflux {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite input, unphysical covariance, or a state outside an operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Caller combined arguments that do not belong together (wrong current for a bath, mismatched time grids).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration (step sizes, ensemble sizes, config files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical result cannot be trusted at the requested accuracy.
class AccuracyError : public Error {
 public:
  using Error::Error;
};

/// Explicit time stepping went unstable.
class StabilityError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// The dephasing generator is quartic; Gaussian moment flows cannot represent it.
class GaussianityNotPreserved : public UnsupportedError {
 public:
  using UnsupportedError::UnsupportedError;
};

}  // namespace wflux
