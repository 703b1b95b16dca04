#include "panorag/error.hpp"

namespace panorag {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadRequest: return "bad_request";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::FileNotFound: return "file_not_found";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::DegenerateInput: return "degenerate_input";
    case ErrorCode::DegeneratePath: return "degenerate_path";
    case ErrorCode::EmptyTrajectory: return "empty_trajectory";
    case ErrorCode::NoOverlap: return "no_overlap";
    case ErrorCode::BadAspect: return "bad_aspect";
    case ErrorCode::PitchOutOfRange: return "pitch_out_of_range";
    case ErrorCode::IncompatibleDims: return "incompatible_dims";
    case ErrorCode::ConditionTooShort: return "condition_too_short";
    case ErrorCode::NoCoverage: return "no_coverage";
    case ErrorCode::BackendFailure: return "backend_failure";
    case ErrorCode::FrameCountMismatch: return "frame_count_mismatch";
    case ErrorCode::SessionNotActive: return "session_not_active";
    case ErrorCode::SessionBusy: return "session_busy";
    case ErrorCode::Cancelled: return "cancelled";
    case ErrorCode::DimMismatch: return "dim_mismatch";
    case ErrorCode::AllMasked: return "all_masked";
    case ErrorCode::TooSmall: return "too_small";
    case ErrorCode::SqrtNonConvergence: return "sqrt_non_convergence";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

}  // namespace panorag
