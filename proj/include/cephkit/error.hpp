#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cephkit {

// Machine-readable failure categories. The string forms are part of the
// wire contract (quarantine.tsv, HTTP error envelopes, CLI diagnostics).
enum class ErrorCode {
  ParseError,
  MissingLandmark,
  OutOfBounds,
  Degenerate,
  DuplicateId,
  NonpositiveSd,
  MissingCalibration,
  OrientationUndetermined,
  MissingMeasurement,
  MissingTemplate,
  EmptyInstructionSet,
  UnknownAnalysis,
  UnknownSession,
  BackendUnreachable,
  EmptyMessage,
  BadRequest,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // Optional location of a parse failure (1-based line/column, or a field
  // path such as "landmarks.XX").
  std::optional<std::size_t> line;
  std::optional<std::size_t> column;
  std::optional<std::string> field;

 private:
  ErrorCode code_;
};

}  // namespace cephkit
