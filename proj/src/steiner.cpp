#include "cephkit/steiner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cephkit {
namespace {

using L = LandmarkId;
using M = MeasurementId;

constexpr std::array<std::string_view, kMeasurementCount> kNames = {
    "SNA",     "SNB",      "ANB",     "SND",      "YAXIS",        "MPFH",    "FACIAL", "U1NA_DEG",
    "U1NA_MM", "L1NB_DEG", "L1NB_MM", "POGNB_MM", "INTERINCISAL", "GOGN_SN", "OCC_SN",
};

constexpr std::array<M, kMeasurementCount> kAll = [] {
  std::array<M, kMeasurementCount> ids{};
  for (std::size_t i = 0; i < kMeasurementCount; ++i) ids[i] = static_cast<M>(i);
  return ids;
}();

void append_unique(std::vector<L>& out, L id) {
  if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
}

// Difference rows pull their operands from rows declared before them.
std::vector<L> operands(const Formula& f, const std::vector<MeasurementDefinition>& earlier) {
  std::vector<L> out;
  std::visit(
      [&](const auto& op) {
        using T = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<T, VertexAngle>) {
          for (L id : {op.vertex, op.ray1, op.ray2}) append_unique(out, id);
        } else if constexpr (std::is_same_v<T, LineAngle>) {
          for (L id : {op.a_from, op.a_to, op.b_from, op.b_to}) append_unique(out, id);
        } else if constexpr (std::is_same_v<T, SignedDistance>) {
          for (L id : {op.point, op.line_from, op.line_to}) append_unique(out, id);
        } else {
          for (M m : {op.minuend, op.subtrahend}) {
            for (L id : earlier.at(static_cast<std::size_t>(m)).required_landmarks) append_unique(out, id);
          }
        }
      },
      f);
  return out;
}

std::vector<MeasurementDefinition> build_table() {
  std::vector<MeasurementDefinition> t;
  auto add = [&](M id, Unit unit, Formula f) {
    auto required = operands(f, t);
    t.push_back({id, unit, f, std::move(required)});
  };
  const Unit deg = Unit::Degrees;
  const Unit mm = Unit::Millimeters;

  add(M::SNA, deg, VertexAngle{L::N, L::S, L::A});
  add(M::SNB, deg, VertexAngle{L::N, L::S, L::B});
  add(M::ANB, deg, Difference{M::SNA, M::SNB});
  add(M::SND, deg, VertexAngle{L::N, L::S, L::D});
  add(M::YAXIS, deg, LineAngle{L::S, L::Gn, L::Po, L::Or});
  add(M::MPFH, deg, LineAngle{L::Go, L::Me, L::Po, L::Or});
  add(M::FACIAL, deg, LineAngle{L::N, L::Pog, L::Or, L::Po});
  add(M::U1NA_DEG, deg, LineAngle{L::U1A, L::U1E, L::N, L::A});
  add(M::U1NA_MM, mm, SignedDistance{L::U1E, L::N, L::A});
  // Lower incisor axis runs edge->apex so a normally proclined incisor reads
  // as an acute angle against N->B.
  add(M::L1NB_DEG, deg, LineAngle{L::L1E, L::L1A, L::N, L::B});
  add(M::L1NB_MM, mm, SignedDistance{L::L1E, L::N, L::B});
  add(M::POGNB_MM, mm, SignedDistance{L::Pog, L::N, L::B});
  add(M::INTERINCISAL, deg, LineAngle{L::U1E, L::U1A, L::L1E, L::L1A});
  add(M::GOGN_SN, deg, LineAngle{L::S, L::N, L::Go, L::Gn});
  add(M::OCC_SN, deg, LineAngle{L::S, L::N, L::OcP, L::OcA});
  return t;
}

const std::vector<MeasurementDefinition>& table() {
  static const std::vector<MeasurementDefinition> t = build_table();
  return t;
}

std::string join_names(const std::vector<L>& ids) {
  std::string out;
  for (L id : ids) {
    if (!out.empty()) out += ", ";
    out += landmark_name(id);
  }
  return out;
}

double evaluate(const LandmarkSet& s, const Formula& f) {
  return std::visit(
      [&](const auto& op) -> double {
        using T = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<T, VertexAngle>) {
          return angle_at_vertex(s.at(op.vertex), s.at(op.ray1), s.at(op.ray2));
        } else if constexpr (std::is_same_v<T, LineAngle>) {
          return directed_line_angle(s.at(op.a_from), s.at(op.a_to), s.at(op.b_from), s.at(op.b_to));
        } else if constexpr (std::is_same_v<T, SignedDistance>) {
          return to_physical(signed_point_line_distance(s.at(op.point), s.at(op.line_from), s.at(op.line_to)),
                             *s.calibration);
        } else {
          return evaluate(s, definition(op.minuend).formula) - evaluate(s, definition(op.subtrahend).formula);
        }
      },
      f);
}

}  // namespace

std::string_view measurement_name(MeasurementId id) noexcept { return kNames[static_cast<std::size_t>(id)]; }

std::optional<MeasurementId> measurement_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kMeasurementCount; ++i) {
    if (kNames[i] == name) return static_cast<M>(i);
  }
  return std::nullopt;
}

const std::array<MeasurementId, kMeasurementCount>& all_measurements() noexcept { return kAll; }

std::string_view unit_name(Unit u) noexcept { return u == Unit::Degrees ? "deg" : "mm"; }

const MeasurementDefinition& definition(MeasurementId id) { return table().at(static_cast<std::size_t>(id)); }

std::vector<LandmarkId> missing_landmarks(const LandmarkSet& s, MeasurementId id) {
  std::vector<L> missing;
  for (L l : definition(id).required_landmarks) {
    if (!s.has(l)) missing.push_back(l);
  }
  return missing;
}

MeasurementResult compute(const LandmarkSet& s, MeasurementId id) {
  if (s.orientation != Orientation::FacingRight) {
    throw Error(ErrorCode::OrientationUndetermined, "landmark set is not orientation-normalized");
  }
  const auto& def = definition(id);
  if (auto missing = missing_landmarks(s, id); !missing.empty()) {
    throw Error(ErrorCode::MissingLandmark, "missing landmarks: " + join_names(missing));
  }
  if (def.unit == Unit::Millimeters && !s.calibration) {
    throw Error(ErrorCode::MissingCalibration, "mm measurement requires calibration");
  }
  return {id, evaluate(s, def.formula), def.unit, def.required_landmarks};
}

MeasurementBatch compute_all(const LandmarkSet& s, std::span<const MeasurementId> ids) {
  std::vector<M> ordered(ids.begin(), ids.end());
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  MeasurementBatch batch;
  for (M id : ordered) {
    try {
      batch.results.push_back(compute(s, id));
    } catch (const Error& e) {
      std::vector<L> missing;
      if (e.code() == ErrorCode::MissingLandmark) missing = missing_landmarks(s, id);
      batch.skipped.push_back({id, e.code(), e.what(), std::move(missing)});
    }
  }
  return batch;
}

MeasurementBatch compute_all(const LandmarkSet& s) { return compute_all(s, kAll); }

const MeasurementResult* find(std::span<const MeasurementResult> results, MeasurementId id) {
  for (const auto& r : results) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void NormTable::set(MeasurementId id, NormEntry entry) {
  if (!std::isfinite(entry.mean)) {
    throw Error(ErrorCode::ParseError, std::string("non-finite mean for ") + std::string(measurement_name(id)));
  }
  if (!std::isfinite(entry.sd) || entry.sd <= 0.0) {
    throw Error(ErrorCode::NonpositiveSd, std::string("sd must be positive for ") + std::string(measurement_name(id)));
  }
  entries_[id] = entry;
}

const NormEntry* NormTable::get(MeasurementId id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::string_view grade_name(Grade g) noexcept {
  switch (g) {
    case Grade::Low: return "LOW";
    case Grade::Normal: return "NORMAL";
    case Grade::High: return "HIGH";
  }
  return "NORMAL";
}

Grade grade_for_z(double z) noexcept {
  if (z < -2.0) return Grade::Low;
  if (z > 2.0) return Grade::High;
  return Grade::Normal;
}

std::vector<Deviation> grade(std::span<const MeasurementResult> results, const NormTable& norms) {
  std::vector<Deviation> out;
  for (const auto& r : results) {
    const NormEntry* n = norms.get(r.id);
    if (!n) continue;
    const double z = (r.value - n->mean) / n->sd;
    out.push_back({r.id, r.value, n->mean, n->sd, z, grade_for_z(z)});
  }
  return out;
}

const Deviation* find(std::span<const Deviation> deviations, MeasurementId id) {
  for (const auto& d : deviations) {
    if (d.id == id) return &d;
  }
  return nullptr;
}

std::string_view sagittal_name(SagittalClass c) noexcept {
  switch (c) {
    case SagittalClass::ClassI: return "CLASS_I";
    case SagittalClass::ClassII: return "CLASS_II";
    case SagittalClass::ClassIII: return "CLASS_III";
  }
  return "CLASS_I";
}

std::string_view vertical_name(VerticalPattern v) noexcept {
  switch (v) {
    case VerticalPattern::LowAngle: return "LOW_ANGLE";
    case VerticalPattern::Average: return "AVERAGE";
    case VerticalPattern::HighAngle: return "HIGH_ANGLE";
  }
  return "AVERAGE";
}

SagittalClass classify_sagittal(double anb, const Thresholds& t) noexcept {
  if (anb > t.anb_hi) return SagittalClass::ClassII;
  if (anb < t.anb_lo) return SagittalClass::ClassIII;
  return SagittalClass::ClassI;
}

VerticalPattern classify_vertical(double mpfh, const Thresholds& t) noexcept {
  if (mpfh > t.mpfh_hi) return VerticalPattern::HighAngle;
  if (mpfh < t.mpfh_lo) return VerticalPattern::LowAngle;
  return VerticalPattern::Average;
}

SkeletalClassification classify(std::span<const MeasurementResult> results, const Thresholds& t) {
  SkeletalClassification c;
  c.thresholds = t;
  if (const auto* anb = find(results, M::ANB)) c.sagittal = classify_sagittal(anb->value, t);
  if (const auto* mpfh = find(results, M::MPFH)) c.vertical = classify_vertical(mpfh->value, t);
  return c;
}

Analysis analyze(const LandmarkSet& raw, const NormTable& norms, const Thresholds& thresholds) {
  Analysis a;
  a.normalized = normalize_orientation(raw);
  a.batch = compute_all(a.normalized);
  a.deviations = grade(a.batch.results, norms);
  a.classification = classify(a.batch.results, thresholds);
  return a;
}

}  // namespace cephkit
