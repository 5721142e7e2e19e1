#pragma once

#include <stdexcept>
#include <string>

namespace structpop {

/// Base class for all library errors. Every failure mode below is a
/// distinct type so callers can map them onto exit codes or reports.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed call: wrong lengths, invalid ranges, bad preconditions.
class ArgumentError : public Error {
public:
  using Error::Error;
};

/// Root finding asked to work on an interval without a sign change.
class BracketError : public Error {
public:
  using Error::Error;
};

/// An iterative method exceeded its iteration budget.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// A user-supplied function produced a non-finite value.
class EvaluationError : public Error {
public:
  using Error::Error;
};

/// A zero of the target function sits (numerically) on a contour used
/// for argument-principle counting; the caller must perturb the region.
class BoundaryZeroError : public Error {
public:
  using Error::Error;
};

/// Bad or incomplete configuration (unknown family, missing parameter,
/// unreadable file, schema violation).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// The model violates a structural assumption (growth rate not positive,
/// negative fertility, ...).
class ModelError : public Error {
public:
  using Error::Error;
};

/// An operation was invoked on the wrong kind of model (e.g. a separable
/// formula applied to a general kernel).
class RouteError : public Error {
public:
  using Error::Error;
};

/// The computed spectrum contradicts the expected structure (dominant
/// eigenvalue complex where a real one is guaranteed).
class SpectralAnomalyError : public Error {
public:
  using Error::Error;
};

/// An assembled operator failed its internal cross-check.
class AssemblyError : public Error {
public:
  using Error::Error;
};

/// Time step violates the admissible step-size restriction.
class StepSizeError : public Error {
public:
  using Error::Error;
};

/// The automatic step-size control collapsed below the representable floor.
class StiffnessError : public Error {
public:
  using Error::Error;
};

/// Argument outside the numerically representable domain of a routine.
class RangeError : public Error {
public:
  using Error::Error;
};

/// A dense linear-algebra backend failed to converge.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Verdicts from independent computation routes disagree beyond what
/// discretization error can explain.
class InconsistencyError : public Error {
public:
  using Error::Error;
};

}  // namespace structpop
