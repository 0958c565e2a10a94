#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "tract/errors.hpp"

namespace tract::geom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 perp() const { return {-y, x}; }  // left normal

  Vec2 normalized() const {
    double n = norm();
    if (n < 1e-12) return {1.0, 0.0};
    return {x / n, y / n};
  }

  Vec2 rotated(double angle) const {
    double c = std::cos(angle), s = std::sin(angle);
    return {c * x - s * y, s * x + c * y};
  }
};

inline double dist(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Convex polygon with counter-clockwise vertex order. Vertex order is part
// of the dataset file contract for corridor quads, so construction validates
// CCW instead of silently reversing.
struct ConvexPolygon {
  std::vector<Vec2> pts;

  static ConvexPolygon from_ccw(std::vector<Vec2> pts) {
    ConvexPolygon p{std::move(pts)};
    if (p.pts.size() >= 3 && p.signed_area() < 0.0)
      throw ContractError("ConvexPolygon::from_ccw: vertices are clockwise");
    return p;
  }

  double signed_area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec2 p = pts[i];
      Vec2 q = pts[(i + 1) % pts.size()];
      a += p.cross(q);
    }
    return 0.5 * a;
  }

  double area() const { return std::abs(signed_area()); }

  bool degenerate() const { return pts.size() < 3 || area() < 1e-12; }

  // Half-plane test for convex CCW polygons. Boundary counts as inside.
  bool contains(Vec2 p) const {
    const double tol = 1e-9;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec2 a = pts[i];
      Vec2 b = pts[(i + 1) % pts.size()];
      if ((b - a).cross(p - a) < -tol) return false;
    }
    return true;
  }

  bool is_convex() const {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec2 a = pts[i];
      Vec2 b = pts[(i + 1) % pts.size()];
      Vec2 c = pts[(i + 2) % pts.size()];
      if ((b - a).cross(c - b) < -1e-12) return false;
    }
    return true;
  }
};

inline bool point_in_union(std::span<const ConvexPolygon> polys, Vec2 p) {
  for (const auto& poly : polys)
    if (poly.contains(p)) return true;
  return false;
}

// Rigid frame: world -> local is translate then rotate by -heading.
struct Pose {
  Vec2 origin;
  double heading = 0.0;

  Vec2 to_local(Vec2 world) const { return (world - origin).rotated(-heading); }
  Vec2 to_world(Vec2 local) const { return local.rotated(heading) + origin; }
};

inline ConvexPolygon to_local(const Pose& pose, const ConvexPolygon& poly) {
  ConvexPolygon out;
  out.pts.reserve(poly.pts.size());
  for (Vec2 p : poly.pts) out.pts.push_back(pose.to_local(p));
  return out;
}

// Axis-aligned corridor quad helper: rectangle around segment [a, b] with the
// given half width, padded slightly along the axis so segment endpoints are
// robustly inside. Vertex order [a+wn, a-wn, b-wn, b+wn] is CCW.
inline ConvexPolygon segment_quad(Vec2 a, Vec2 b, double half_width, double pad = 1e-6) {
  Vec2 d = (b - a).normalized();
  Vec2 n = d.perp();
  Vec2 a2 = a - d * pad;
  Vec2 b2 = b + d * pad;
  return ConvexPolygon::from_ccw(
      {a2 + n * half_width, a2 - n * half_width, b2 - n * half_width, b2 + n * half_width});
}

inline ConvexPolygon regular_octagon(Vec2 center, double radius) {
  ConvexPolygon p;
  for (int i = 0; i < 8; ++i) {
    double a = 2.0 * 3.14159265358979323846 * i / 8.0;
    p.pts.push_back(center + Vec2{std::cos(a), std::sin(a)} * radius);
  }
  return p;
}

}  // namespace tract::geom
