#pragma once

#include <stdexcept>
#include <string>

namespace ifa {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up, or invalid sizes (non-square input, k >= n, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input fails the relative-symmetry validation of CovMatrix.
class AsymmetryError : public Error {
 public:
  using Error::Error;
};

// A matrix required to be positive (semi)definite is not; the message
// reports the offending smallest eigenvalue.
class NotPsdError : public Error {
 public:
  using Error::Error;
};

// A matrix required to be invertible is singular; the message names the
// offending block or factor.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// An inversion whose condition estimate exceeds the supported range.
class IllConditionedError : public Error {
 public:
  using Error::Error;
};

// Arguments violate a documented domain restriction.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Parameters do not have the required block/zero pattern.
class StructureError : public Error {
 public:
  using Error::Error;
};

// A singular-noise pattern that cannot be realized (n2 > k).
class InfeasiblePatternError : public Error {
 public:
  using Error::Error;
};

// A covariance fails the exact-realizability test.
class NotRealizableError : public Error {
 public:
  using Error::Error;
};

// Internal consistency failure: the objective increased along an iteration
// that is guaranteed to be nonincreasing. The message carries a dump of the
// offending step.
class MonotonicityError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; the message names the file and line.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace ifa
