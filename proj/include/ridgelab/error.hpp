#pragma once

#include <stdexcept>
#include <string>

namespace ridgelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an input that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Ground truth (signal or noise) was needed but the dataset carries none.
class MissingGroundTruth : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Noise variance and signal energy are both zero, so the optimal η is undefined.
class BothZero : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Numerical failure: the computation is well-formed but cannot be carried out.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The fixed-point system has no solution (interpolation requested with m >= n).
class NoSolution : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// An iterative solver hit its iteration cap.
class NonConvergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A linear system or Gram matrix is too close to singular.
class IllConditioned : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Requested estimator is not defined in the data's regime (e.g. ridgeless with m >= n).
class WrongRegime : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// The closed-form denominator of the effective-noise equation vanished.
class DegenerateDenominator : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace ridgelab
