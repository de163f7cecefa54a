#pragma once

#include <stdexcept>
#include <string>

namespace ecborrow {

// Base class for all library failures. The CLI maps the subclasses below onto
// distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a record/dataset invariant or the CSV schema.
class DataError : public Error {
 public:
  using Error::Error;
};

// An iterative solver exhausted its iteration budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// The calibration target is outside (or on the boundary of) the convex hull
// of the external-control basis rows.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown: singular design, zero denominator, positivity failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecborrow
