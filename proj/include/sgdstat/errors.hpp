#pragma once

#include <stdexcept>
#include <string>

namespace sgdstat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or violated operation precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Stability condition violated: no stationary state exists.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

// Vectorized linear system singular or above the condition threshold.
class UnstableConfigurationError : public Error {
 public:
  using Error::Error;
};

class DivergentSeriesError : public Error {
 public:
  using Error::Error;
};

class NotPsdError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, int iterations, double last_residual)
      : Error(what), iterations_(iterations), last_residual_(last_residual) {}
  int iterations() const { return iterations_; }
  double last_residual() const { return last_residual_; }

 private:
  int iterations_;
  double last_residual_;
};

class NoOptimumError : public Error {
 public:
  using Error::Error;
};

class EmptyEnsembleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sgdstat
