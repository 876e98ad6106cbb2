#include "hfr/error.hpp"

namespace hfr {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::DuplicateParentConstraint: return "DuplicateParentConstraint";
    case ErrorCode::ChildOutOfRange: return "ChildOutOfRange";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::InvalidConstraint: return "InvalidConstraint";
    case ErrorCode::MissingLeafValue: return "MissingLeafValue";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NotCorrelation: return "NotCorrelation";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace hfr
