#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace panorag {

enum class ErrorCode {
  BadRequest,
  NotFound,
  FileNotFound,
  ParseError,
  DegenerateInput,
  DegeneratePath,
  EmptyTrajectory,
  NoOverlap,
  BadAspect,
  PitchOutOfRange,
  IncompatibleDims,
  ConditionTooShort,
  NoCoverage,
  BackendFailure,
  FrameCountMismatch,
  SessionNotActive,
  SessionBusy,
  Cancelled,
  DimMismatch,
  AllMasked,
  TooSmall,
  SqrtNonConvergence,
  Internal,
};

/// Machine-readable name used on the wire and by the CLI ("no_coverage", ...).
std::string_view error_code_name(ErrorCode code);

/// Every engine failure is reported through this type. `detail` carries a
/// compact JSON document with structured context (e.g. the uncovered
/// arc-length interval for NoCoverage); it is empty when there is none.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace panorag
