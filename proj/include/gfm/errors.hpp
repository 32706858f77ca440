#pragma once

#include <stdexcept>
#include <string>

namespace gfm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative routine failed; carries the iteration count it stopped at.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const { return iterations_; }

 private:
  int iterations_;
};

class StabilityError : public Error {
 public:
  using Error::Error;
};

class WellPosednessError : public Error {
 public:
  using Error::Error;
};

/// Newton-type solver gave up; residual is the last infinity norm seen.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gfm
