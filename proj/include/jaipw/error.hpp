#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace jaipw {

enum class ErrorKind {
  InvalidArgument,
  Config,
  MissingColumn,
  AuxiliaryInSelection,
  EmptyAuxiliary,
  DataFormat,
  DimensionMismatch,
  SingularJacobian,
  NoConvergence,
  RankDeficient,
  MissingCategory,
  ResponseOutOfRange,
  TooFewRows,
  OverlapCategoryEmpty,
  EmptyCell,
  InfeasibleCalibration,
  SingularBread,
  SingularH,
  NoOuterConvergence,
  OverlapPresent,
  TooManyFailedReplicates,
  ZeroVariance,
};

// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { Config, Numerical, Data };

const char* kind_name(ErrorKind kind);
ErrorCategory category_of(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Solver failures keep the best iterate so callers can degrade gracefully.
class SolverError : public Error {
 public:
  SolverError(ErrorKind kind, const std::string& message, Eigen::VectorXd best, double residual);
  const Eigen::VectorXd& best() const noexcept { return best_; }
  double residual() const noexcept { return residual_; }

 private:
  Eigen::VectorXd best_;
  double residual_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace jaipw
