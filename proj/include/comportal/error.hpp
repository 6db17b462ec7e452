#ifndef COMPORTAL_ERROR_HPP
#define COMPORTAL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace comportal {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: wrong dimensions, non-finite entries, bad permutation.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A structural precondition failed (not outflow connected, not a trap, ...).
class PreconditionError : public Error {
public:
  using Error::Error;
};

/// Numerically singular matrix in a linear solve.
class SingularMatrixError : public Error {
public:
  using Error::Error;
};

/// Expression syntax error. `position` is a 0-based character offset.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

/// Runtime failure while evaluating an expression (guarded division, NaN).
class EvaluationError : public Error {
public:
  using Error::Error;
};

/// Integrator gave up: step fell below the minimum while the state kept leaving the box.
class StepUnderflowError : public Error {
public:
  StepUnderflowError(const std::string& what, int component, double time)
      : Error(what), component_(component), time_(time) {}
  /// 1-based component that left the box.
  int component() const noexcept { return component_; }
  double time() const noexcept { return time_; }

private:
  int component_;
  double time_;
};

/// A structural assumption (A3-A5 style monotonicity) is violated at a concrete point.
class AssumptionViolation : public Error {
public:
  AssumptionViolation(const std::string& assumption, const std::string& what)
      : Error(assumption + ": " + what), assumption_(assumption) {}
  const std::string& assumption() const noexcept { return assumption_; }

private:
  std::string assumption_;
};

}  // namespace comportal

#endif  // COMPORTAL_ERROR_HPP
