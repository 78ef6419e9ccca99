#pragma once

#include <stdexcept>
#include <string>

namespace meshlearn {

/// Raised for shape, length, range and other argument contract violations.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An element whose measure (or normalized Jacobian determinant) is too small.
class DegenerateMesh : public std::runtime_error {
 public:
  DegenerateMesh(std::size_t element, const std::string& what)
      : std::runtime_error(what), element_(element) {}
  std::size_t element() const noexcept { return element_; }

 private:
  std::size_t element_;
};

/// Two neighbouring nodes share a coordinate, so the per-axis quotient blows up.
class AxisAlignedDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A nonlinear implicit step failed to reach its tolerance.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(double residual_norm, const std::string& what)
      : std::runtime_error(what), residual_norm_(residual_norm) {}
  double residual_norm() const noexcept { return residual_norm_; }

 private:
  double residual_norm_;
};

/// Backward was requested on a tape that has already been consumed.
class TapeConsumed : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A training epoch produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that are individually valid but do not fit together, such as an
/// environment whose dimension differs from the checkpoint's.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read, written, or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace meshlearn
