#pragma once

#include <stdexcept>
#include <string>

namespace podds {

// Error kinds raised by the library. Every class derives from a standard
// exception so callers that only care about the broad category can catch that.

/// Odds function or nuisance evaluation produced a non-finite or negative value.
class InvalidModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Survival odds are infinite (R(t,z) = 0), so the odds ratio is undefined.
class DegenerateOdds : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Inverting R(., z) failed to bracket or converge.
class InversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Time argument beyond the follow-up horizon or the solver grid.
class HorizonError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A working model could not be fitted.
class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Only one treatment arm is represented.
class PositivityViolation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Division by a vanishing hazard density or expectation.
class Singularity : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CoefficientSingularity : public Singularity {
 public:
  using Singularity::Singularity;
};

/// Integro-differential solve did not meet its residual tolerance.
class SolverFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoRoot : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// beta cannot be identified from the data (e.g. a single treatment arm).
class NonIdentified : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The estimating equation has (numerically) zero slope at the root.
class FlatScore : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent scenario configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace podds
