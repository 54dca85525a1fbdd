#pragma once

#include <stdexcept>
#include <string>

namespace bme {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An argument is outside the mathematical domain of the operation.
struct DomainError : Error {
  using Error::Error;
};

/// Effective price p + dp fell below the divide-by-price guard.
struct GuardViolation : Error {
  using Error::Error;
};

/// Circulating supply would become zero or negative.
struct NonPositiveSupply : Error {
  using Error::Error;
};

/// A price series contains a zero or negative entry where returns are needed.
struct NonPositivePrice : Error {
  using Error::Error;
};

/// Two sequences that must agree in length do not.
struct LengthMismatch : Error {
  using Error::Error;
};

/// Control-block Hessian stayed indefinite after regularization escalation.
struct SingularControlHessian : Error {
  using Error::Error;
};

/// Augmented-Lagrangian penalty grew past its cap without closing the
/// constraint violation.
struct PenaltyDiverged : Error {
  using Error::Error;
};

/// QP constraints admit no feasible point.
struct Infeasible : Error {
  using Error::Error;
};

/// QP objective is unbounded below over the feasible set.
struct Unbounded : Error {
  using Error::Error;
};

/// A subproblem QP inside SCP was infeasible; message carries the iteration.
struct QPInfeasible : Error {
  using Error::Error;
};

/// SCP trust region shrank to nothing without reaching convergence.
struct TrustRegionCollapsed : Error {
  using Error::Error;
};

/// No KKT-consistent follower branch exists at some timestep.
struct BranchSearchExhausted : Error {
  using Error::Error;
};

/// Series is too short for the requested differencing/lag order.
struct TooShort : Error {
  using Error::Error;
};

/// Fewer than the minimum number of nonzero paired differences.
struct TooFewPairs : Error {
  using Error::Error;
};

/// Regression matrix is rank deficient (for example a constant series).
struct RankDeficient : Error {
  using Error::Error;
};

/// A CSV cell failed to parse; message carries the 1-based line number.
struct ParseError : Error {
  using Error::Error;
};

/// CSV header does not match the documented schema.
struct SchemaMismatch : Error {
  using Error::Error;
};

/// Scenario or experiment configuration failed validation.
struct BadSpec : Error {
  using Error::Error;
};

/// Filesystem read/write failure.
struct IOError : Error {
  using Error::Error;
};

}  // namespace bme
