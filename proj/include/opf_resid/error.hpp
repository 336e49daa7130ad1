#pragma once

#include <stdexcept>
#include <string>

namespace opf_resid {

/// Base class for every domain error raised by the library. The CLI maps
/// these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed case or JSON input.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input that parsed but violates a model invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside a solver (singular matrix, NaN, ...).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// The KKT matrix at a reported optimum could not be inverted reliably.
class DegeneracyError : public SolverError {
 public:
  using SolverError::SolverError;
};

}  // namespace opf_resid
