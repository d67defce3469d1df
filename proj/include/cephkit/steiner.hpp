#pragma once

#include "cephkit/error.hpp"
#include "cephkit/geometry.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cephkit {

// The measurement battery, in canonical output order.
enum class MeasurementId {
  SNA,
  SNB,
  ANB,
  SND,
  YAXIS,
  MPFH,
  FACIAL,
  U1NA_DEG,
  U1NA_MM,
  L1NB_DEG,
  L1NB_MM,
  POGNB_MM,
  INTERINCISAL,
  GOGN_SN,
  OCC_SN,
};

inline constexpr std::size_t kMeasurementCount = 15;

enum class Unit { Degrees, Millimeters };

std::string_view measurement_name(MeasurementId id) noexcept;
std::optional<MeasurementId> measurement_from_name(std::string_view name) noexcept;
const std::array<MeasurementId, kMeasurementCount>& all_measurements() noexcept;
std::string_view unit_name(Unit u) noexcept;

struct VertexAngle {
  LandmarkId vertex, ray1, ray2;
};
struct LineAngle {
  LandmarkId a_from, a_to, b_from, b_to;
};
struct SignedDistance {
  LandmarkId point, line_from, line_to;
};
struct Difference {
  MeasurementId minuend, subtrahend;
};

using Formula = std::variant<VertexAngle, LineAngle, SignedDistance, Difference>;

struct MeasurementDefinition {
  MeasurementId id;
  Unit unit;
  Formula formula;
  std::vector<LandmarkId> required_landmarks;
};

const MeasurementDefinition& definition(MeasurementId id);

struct MeasurementResult {
  MeasurementId id;
  double value;
  Unit unit;
  std::vector<LandmarkId> inputs_used;

  friend bool operator==(const MeasurementResult&, const MeasurementResult&) = default;
};

struct SkippedMeasurement {
  MeasurementId id;
  ErrorCode code;
  std::string reason;
  std::vector<LandmarkId> missing;  // populated for MissingLandmark

  friend bool operator==(const SkippedMeasurement&, const SkippedMeasurement&) = default;
};

struct MeasurementBatch {
  std::vector<MeasurementResult> results;
  std::vector<SkippedMeasurement> skipped;
};

std::vector<LandmarkId> missing_landmarks(const LandmarkSet& s, MeasurementId id);

// Requires a normalized (facing-right) set. Throws Error with MissingLandmark,
// MissingCalibration, Degenerate or OrientationUndetermined.
MeasurementResult compute(const LandmarkSet& s, MeasurementId id);

// Never throws for per-measurement failures; results follow declaration order.
MeasurementBatch compute_all(const LandmarkSet& s, std::span<const MeasurementId> ids);
MeasurementBatch compute_all(const LandmarkSet& s);

const MeasurementResult* find(std::span<const MeasurementResult> results, MeasurementId id);

// ---------------------------------------------------------------------------
// Grading

struct NormEntry {
  double mean;
  double sd;
};

class NormTable {
 public:
  // Throws Error(NonpositiveSd) when sd <= 0 or not finite.
  void set(MeasurementId id, NormEntry entry);
  const NormEntry* get(MeasurementId id) const;
  bool empty() const noexcept { return entries_.empty(); }
  const std::map<MeasurementId, NormEntry>& entries() const noexcept { return entries_; }

  std::string provenance;

 private:
  std::map<MeasurementId, NormEntry> entries_;
};

enum class Grade { Low, Normal, High };

std::string_view grade_name(Grade g) noexcept;
Grade grade_for_z(double z) noexcept;

struct Deviation {
  MeasurementId id;
  double value;
  double mean;
  double sd;
  double z;
  Grade grade;
};

std::vector<Deviation> grade(std::span<const MeasurementResult> results, const NormTable& norms);

const Deviation* find(std::span<const Deviation> deviations, MeasurementId id);

// ---------------------------------------------------------------------------
// Classification

enum class SagittalClass { ClassI, ClassII, ClassIII };
enum class VerticalPattern { LowAngle, Average, HighAngle };

std::string_view sagittal_name(SagittalClass c) noexcept;
std::string_view vertical_name(VerticalPattern v) noexcept;

struct Thresholds {
  double anb_lo = 0.0;
  double anb_hi = 4.0;
  double mpfh_lo = 22.0;
  double mpfh_hi = 32.0;
};

struct SkeletalClassification {
  std::optional<SagittalClass> sagittal;  // nullopt when ANB unavailable
  std::optional<VerticalPattern> vertical;  // nullopt when MPFH unavailable
  Thresholds thresholds;
};

SagittalClass classify_sagittal(double anb, const Thresholds& t) noexcept;
VerticalPattern classify_vertical(double mpfh, const Thresholds& t) noexcept;
SkeletalClassification classify(std::span<const MeasurementResult> results, const Thresholds& t = {});

// ---------------------------------------------------------------------------
// Whole-case pipeline: normalize, measure, grade, classify.

struct Analysis {
  LandmarkSet normalized;
  MeasurementBatch batch;
  std::vector<Deviation> deviations;
  SkeletalClassification classification;
};

Analysis analyze(const LandmarkSet& raw, const NormTable& norms, const Thresholds& thresholds);

}  // namespace cephkit
