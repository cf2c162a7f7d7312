#pragma once

#include <stdexcept>
#include <string>

namespace dsse {

/// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: shapes, ranges, malformed files. Maps to CLI exit code 2.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double last_mismatch)
      : Error(what), iterations_(iterations), last_mismatch_(last_mismatch) {}
  int iterations() const { return iterations_; }
  double last_mismatch() const { return last_mismatch_; }

 private:
  int iterations_;
  double last_mismatch_;
};

/// NaN/Inf or a singular linear system where a finite answer was required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsse
