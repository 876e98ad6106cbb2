#pragma once

#include <stdexcept>
#include <string>

namespace hfr {

enum class ErrorCode {
  CycleDetected,
  DuplicateParentConstraint,
  ChildOutOfRange,
  SelfLoop,
  InvalidConstraint,
  MissingLeafValue,
  IndexOutOfRange,
  DimensionMismatch,
  BadDimension,
  DivergenceDetected,
  NotConverged,
  InsufficientData,
  NotPositiveDefinite,
  NotCorrelation,
  InvalidConfig,
  IoError,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hfr
