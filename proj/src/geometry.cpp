#include "cephkit/geometry.hpp"

#include "cephkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

namespace cephkit {
namespace {

constexpr std::array<std::string_view, kLandmarkCount> kNames = {
    "S",   "N",   "Or",  "Po",  "A",   "B",        "Pog",      "Gn",
    "Me",  "Go",  "D",   "U1E", "U1A", "L1E",      "L1A",      "OcA",
    "OcP", "ANS", "PNS", "Ar",  "UpperLip", "LowerLip", "Subnasale", "SoftPog",
};

constexpr std::array<LandmarkId, kLandmarkCount> kAll = [] {
  std::array<LandmarkId, kLandmarkCount> ids{};
  for (std::size_t i = 0; i < kLandmarkCount; ++i) ids[i] = static_cast<LandmarkId>(i);
  return ids;
}();

double to_degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

struct Vec {
  double x;
  double y;
};

Vec sub(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
double cross(Vec u, Vec v) { return u.x * v.y - u.y * v.x; }
double dot(Vec u, Vec v) { return u.x * v.x + u.y * v.y; }

void require_nonzero(Vec v, const char* what) {
  if (v.x == 0.0 && v.y == 0.0) {
    throw Error(ErrorCode::Degenerate, std::string("zero-length ") + what);
  }
}

// atan2 of (|cross|, dot) is well conditioned near 0 and 180 where acos is not.
double unsigned_angle(Vec u, Vec v) { return to_degrees(std::atan2(std::abs(cross(u, v)), dot(u, v))); }

}  // namespace

std::string_view landmark_name(LandmarkId id) noexcept { return kNames[static_cast<std::size_t>(id)]; }

std::optional<LandmarkId> landmark_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (kNames[i] == name) return static_cast<LandmarkId>(i);
  }
  return std::nullopt;
}

const std::array<LandmarkId, kLandmarkCount>& all_landmarks() noexcept { return kAll; }

Calibration::Calibration(double mm_per_px) : mm_per_px_(mm_per_px) {
  if (!std::isfinite(mm_per_px) || mm_per_px <= 0.0) {
    throw Error(ErrorCode::ParseError, "calibration must be a positive finite mm/px value");
  }
}

std::string_view orientation_name(Orientation o) noexcept {
  switch (o) {
    case Orientation::FacingRight: return "right";
    case Orientation::FacingLeft: return "left";
    case Orientation::Unknown: break;
  }
  return "unknown";
}

double angle_at_vertex(Point2 vertex, Point2 p1, Point2 p2) {
  const Vec u = sub(p1, vertex);
  const Vec v = sub(p2, vertex);
  require_nonzero(u, "ray at vertex");
  require_nonzero(v, "ray at vertex");
  return unsigned_angle(u, v);
}

double directed_line_angle(Point2 a1, Point2 a2, Point2 b1, Point2 b2) {
  const Vec u = sub(a2, a1);
  const Vec v = sub(b2, b1);
  require_nonzero(u, "direction");
  require_nonzero(v, "direction");
  return unsigned_angle(u, v);
}

double signed_point_line_distance(Point2 p, Point2 a, Point2 b) {
  // Evaluate from a fixed endpoint order so reversing the line negates the
  // result bit for bit.
  if (std::tie(a.x, a.y) > std::tie(b.x, b.y)) return -signed_point_line_distance(p, b, a);
  const Vec d = sub(b, a);
  require_nonzero(d, "reference line");
  return cross(sub(p, a), d) / std::hypot(d.x, d.y);
}

double to_physical(double length_px, const Calibration& c) noexcept { return length_px * c.mm_per_px(); }

LandmarkSet normalize_orientation(const LandmarkSet& s) {
  auto inferred = [&]() -> Orientation {
    auto facing = [&](LandmarkId anterior, LandmarkId posterior) -> std::optional<Orientation> {
      if (!s.has(anterior) || !s.has(posterior)) return std::nullopt;
      const double ax = s.at(anterior).x;
      const double px = s.at(posterior).x;
      if (ax == px) return std::nullopt;
      return ax > px ? Orientation::FacingRight : Orientation::FacingLeft;
    };
    if (auto o = facing(LandmarkId::Or, LandmarkId::Po)) return *o;
    if (auto o = facing(LandmarkId::N, LandmarkId::S)) return *o;
    return s.orientation;
  }();

  if (inferred == Orientation::Unknown) {
    throw Error(ErrorCode::OrientationUndetermined,
                "cannot infer facing: need Or/Po or N/S at distinct x, or a declared orientation");
  }

  LandmarkSet out = s;
  out.orientation = Orientation::FacingRight;
  if (inferred == Orientation::FacingRight) return out;

  double sum = 0.0;
  for (const auto& [id, p] : s.points) sum += p.x;
  const double cx = s.points.empty() ? 0.0 : sum / static_cast<double>(s.points.size());
  for (auto& [id, p] : out.points) p.x = 2.0 * cx - p.x;
  return out;
}

}  // namespace cephkit
