#include "jaipw/error.hpp"

#include <utility>

namespace jaipw {

const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::AuxiliaryInSelection: return "AuxiliaryInSelection";
    case ErrorKind::EmptyAuxiliary: return "EmptyAuxiliary";
    case ErrorKind::DataFormat: return "DataFormat";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::MissingCategory: return "MissingCategory";
    case ErrorKind::ResponseOutOfRange: return "ResponseOutOfRange";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::OverlapCategoryEmpty: return "OverlapCategoryEmpty";
    case ErrorKind::EmptyCell: return "EmptyCellError";
    case ErrorKind::InfeasibleCalibration: return "InfeasibleCalibration";
    case ErrorKind::SingularBread: return "SingularBread";
    case ErrorKind::SingularH: return "SingularH";
    case ErrorKind::NoOuterConvergence: return "NoOuterConvergence";
    case ErrorKind::OverlapPresent: return "OverlapPresent";
    case ErrorKind::TooManyFailedReplicates: return "TooManyFailedReplicates";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Config:
    case ErrorKind::EmptyAuxiliary:
    case ErrorKind::AuxiliaryInSelection:
      return ErrorCategory::Config;
    case ErrorKind::MissingColumn:
    case ErrorKind::DataFormat:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::MissingCategory:
    case ErrorKind::ResponseOutOfRange:
    case ErrorKind::TooFewRows:
    case ErrorKind::OverlapCategoryEmpty:
    case ErrorKind::EmptyCell:
    case ErrorKind::OverlapPresent:
      return ErrorCategory::Data;
    default:
      return ErrorCategory::Numerical;
  }
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(kind_name(kind)) + ": " + message), kind_(kind) {}

SolverError::SolverError(ErrorKind kind, const std::string& message, Eigen::VectorXd best,
                         double residual)
    : Error(kind, message), best_(std::move(best)), residual_(residual) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace jaipw
