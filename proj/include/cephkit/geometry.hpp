#pragma once

#include <array>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

namespace cephkit {

// Canonical landmark vocabulary. Declaration order is the canonical order
// used wherever landmarks are listed.
enum class LandmarkId {
  S,    // sella
  N,    // nasion
  Or,   // orbitale
  Po,   // porion
  A,    // subspinale
  B,    // supramentale
  Pog,  // pogonion
  Gn,   // gnathion
  Me,   // menton
  Go,   // gonion
  D,    // symphysis center
  U1E,  // upper incisor edge
  U1A,  // upper incisor apex
  L1E,  // lower incisor edge
  L1A,  // lower incisor apex
  OcA,  // anterior occlusal point
  OcP,  // posterior occlusal point
  ANS,
  PNS,
  Ar,
  // Soft tissue, carried from ordered corpora but never measured.
  UpperLip,
  LowerLip,
  Subnasale,
  SoftPog,
};

inline constexpr std::size_t kLandmarkCount = 24;

std::string_view landmark_name(LandmarkId id) noexcept;
std::optional<LandmarkId> landmark_from_name(std::string_view name) noexcept;
const std::array<LandmarkId, kLandmarkCount>& all_landmarks() noexcept;

struct Point2 {
  double x = 0.0;
  double y = 0.0;  // grows downward (image convention)

  friend bool operator==(const Point2&, const Point2&) = default;
};

class Calibration {
 public:
  // Throws Error(ParseError) unless mm_per_px is finite and positive.
  explicit Calibration(double mm_per_px);

  double mm_per_px() const noexcept { return mm_per_px_; }

  friend bool operator==(const Calibration&, const Calibration&) = default;

 private:
  double mm_per_px_;
};

enum class Orientation { FacingRight, FacingLeft, Unknown };

std::string_view orientation_name(Orientation o) noexcept;

struct LandmarkSet {
  std::map<LandmarkId, Point2> points;  // pixel units
  std::optional<Calibration> calibration;
  Orientation orientation = Orientation::Unknown;

  bool has(LandmarkId id) const { return points.contains(id); }
  const Point2& at(LandmarkId id) const { return points.at(id); }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

// Unsigned angle in degrees between rays vertex->p1 and vertex->p2.
double angle_at_vertex(Point2 vertex, Point2 p1, Point2 p2);

// Unsigned angle in degrees between directions a1->a2 and b1->b2.
// Reversing one direction maps r to 180 - r.
double directed_line_angle(Point2 a1, Point2 a2, Point2 b1, Point2 b2);

// Perpendicular distance from p to the line through a and b, signed by
// cross(p - a, unit(b - a)). With the canonical frame (facing right, y down)
// and a craniocaudal line, anterior points are positive.
double signed_point_line_distance(Point2 p, Point2 a, Point2 b);

double to_physical(double length_px, const Calibration& c) noexcept;

// Mirrors a left-facing set about its x-centroid so anterior is +x.
// Facing is inferred from Or/Po, then N/S; the declared orientation is used
// only when neither pair is present.
LandmarkSet normalize_orientation(const LandmarkSet& s);

}  // namespace cephkit
