#pragma once

#include "cephkit/report.hpp"
#include "cephkit/steiner.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cephkit {

struct CaseFile {
  std::string source_path;
  LandmarkSet landmarks;  // raw, as read (not orientation-normalized)
  std::optional<std::string> case_id;
  std::optional<std::string> image;  // opaque reference; pixels are never read
  std::optional<std::array<double, 2>> image_size_px;

  // case_id, else the stem of source_path, else "case".
  std::string effective_case_id() const;

  friend bool operator==(const CaseFile&, const CaseFile&) = default;
};

struct OrderProfile {
  std::string name;
  std::vector<LandmarkId> order;
  double default_mm_per_px;
};

// Known ordered-text profiles. "isbi19" is the 19-point layout of the
// public ISBI cephalometric challenge corpus.
const OrderProfile* find_profile(std::string_view name);
const OrderProfile& isbi19_profile();

enum class LandmarkFormat { Json, Isbi19, Csv };

std::optional<LandmarkFormat> parse_landmark_format(std::string_view name) noexcept;
// By extension: .json, .txt (isbi19), .csv.
std::optional<LandmarkFormat> detect_landmark_format(std::string_view path) noexcept;

// All parsers throw Error with ParseError, DuplicateId, MissingLandmark or
// MissingCalibration. Parse errors carry a line/column or field location.
CaseFile parse_landmarks_json(std::string_view bytes, std::string source_path = {});
CaseFile parse_landmarks_ordered_txt(std::string_view bytes, const OrderProfile& profile,
                                     std::optional<double> mm_per_px = std::nullopt, std::string source_path = {});
CaseFile parse_landmarks_csv(std::string_view bytes, std::optional<double> mm_per_px = std::nullopt,
                             std::string source_path = {});

// Canonical native document: landmark keys sorted by name, coordinates with
// six fixed decimals, LF line endings.
std::string write_landmarks_json(const CaseFile& c);
std::string write_landmarks_csv(const CaseFile& c);
// Requires every landmark of the profile. Throws Error(MissingLandmark).
std::string write_landmarks_ordered_txt(const CaseFile& c, const OrderProfile& profile);

// Reads and parses a file; format detected from the extension unless given.
// Throws Error(Io) if unreadable.
CaseFile load_case_file(const std::string& path, std::optional<LandmarkFormat> format = std::nullopt,
                        std::optional<double> mm_per_px = std::nullopt);

// `ID MEAN SD` lines with `# provenance: ...` comments.
NormTable load_norms(std::string_view bytes);
// `key value` (or key=value) lines for anb_lo, anb_hi, mpfh_lo, mpfh_hi.
Thresholds load_thresholds(std::string_view bytes);

const NormTable& default_norms();
Thresholds default_thresholds();

}  // namespace cephkit
