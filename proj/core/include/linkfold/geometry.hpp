#pragma once

#include <cmath>
#include <numbers>
#include <optional>

namespace linkfold {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

/// Planar vector in millimetres.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
constexpr Vec2 operator/(Vec2 a, double s) { return {a.x / s, a.y / s}; }

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
constexpr double norm2(Vec2 a) { return dot(a, a); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
/// Counterclockwise quarter turn.
constexpr Vec2 perp(Vec2 a) { return {-a.y, a.x}; }
inline Vec2 normalized(Vec2 a) { return a / norm(a); }
inline Vec2 unit_from_angle(double a) { return {std::cos(a), std::sin(a)}; }
inline double angle_of(Vec2 a) { return std::atan2(a.y, a.x); }
inline Vec2 rotate(Vec2 a, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}
inline bool is_finite(Vec2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }

/// Unsigned angle between two vectors in [0, pi].
inline double angle_between(Vec2 a, Vec2 b) { return std::atan2(std::abs(cross(a, b)), dot(a, b)); }

/// Rigid planar transform: world = position + R(angle) * local.
struct Pose2 {
  Vec2 position{};
  double angle = 0.0;

  Vec2 apply(Vec2 local) const { return position + rotate(local, angle); }
  Vec2 apply_direction(Vec2 local) const { return rotate(local, angle); }
  Vec2 inverse_apply(Vec2 world) const { return rotate(world - position, -angle); }
  Pose2 compose(const Pose2& child) const { return {apply(child.position), angle + child.angle}; }
};

struct Segment {
  Vec2 a{};
  Vec2 b{};

  Vec2 direction() const { return b - a; }
  double length() const { return distance(a, b); }
  Vec2 at(double t) const { return a + t * (b - a); }
};

inline double point_segment_distance(Vec2 p, const Segment& s) {
  const Vec2 d = s.direction();
  const double l2 = norm2(d);
  double t = l2 > 0.0 ? dot(p - s.a, d) / l2 : 0.0;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return distance(p, s.at(t));
}

struct RayHit {
  double distance;  ///< along the ray, in units of |direction|
  double t;         ///< segment parameter in [0, 1]
};

/// Intersection of the ray origin + s*dir (s > min_s) with a segment.
inline std::optional<RayHit> intersect_ray_segment(Vec2 origin, Vec2 dir, const Segment& seg,
                                                   double min_s = 1e-9) {
  const Vec2 e = seg.direction();
  const double den = cross(dir, e);
  if (std::abs(den) < 1e-15) return std::nullopt;
  const Vec2 w = seg.a - origin;
  const double s = cross(w, e) / den;
  const double t = cross(w, dir) / den;
  if (s <= min_s || t < 0.0 || t > 1.0) return std::nullopt;
  return RayHit{s, t};
}

/// Intersection of two circles; `sign` picks the solution on the left (+1)
/// or right (-1) of the directed line c0 -> c1.
inline std::optional<Vec2> circle_circle(Vec2 c0, double r0, Vec2 c1, double r1, int sign) {
  const Vec2 d = c1 - c0;
  const double l = norm(d);
  if (l < 1e-12) return std::nullopt;
  const double a = (r0 * r0 - r1 * r1 + l * l) / (2.0 * l);
  const double h2 = r0 * r0 - a * a;
  if (h2 < 0.0) return std::nullopt;
  const Vec2 u = d / l;
  return c0 + a * u + (sign >= 0 ? 1.0 : -1.0) * std::sqrt(h2) * perp(u);
}

}  // namespace linkfold
