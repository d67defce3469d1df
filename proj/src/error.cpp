#include "cephkit/error.hpp"

namespace cephkit {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ParseError: return "PARSE_ERROR";
    case ErrorCode::MissingLandmark: return "MISSING_LANDMARK";
    case ErrorCode::OutOfBounds: return "OUT_OF_BOUNDS";
    case ErrorCode::Degenerate: return "DEGENERATE";
    case ErrorCode::DuplicateId: return "DUPLICATE_ID";
    case ErrorCode::NonpositiveSd: return "NONPOSITIVE_SD";
    case ErrorCode::MissingCalibration: return "MISSING_CALIBRATION";
    case ErrorCode::OrientationUndetermined: return "ORIENTATION_UNDETERMINED";
    case ErrorCode::MissingMeasurement: return "MISSING_MEASUREMENT";
    case ErrorCode::MissingTemplate: return "MISSING_TEMPLATE";
    case ErrorCode::EmptyInstructionSet: return "EMPTY_INSTRUCTION_SET";
    case ErrorCode::UnknownAnalysis: return "UNKNOWN_ANALYSIS";
    case ErrorCode::UnknownSession: return "UNKNOWN_SESSION";
    case ErrorCode::BackendUnreachable: return "BACKEND_UNREACHABLE";
    case ErrorCode::EmptyMessage: return "EMPTY_MESSAGE";
    case ErrorCode::BadRequest: return "BAD_REQUEST";
    case ErrorCode::Io: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace cephkit
