#pragma once

#include <algorithm>
#include <cmath>

namespace advbench {

/// Axis-aligned box: top-left corner plus size, in pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y); }

  static BBox from_center(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  bool operator==(const BBox&) const = default;
};

inline double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

inline double intersection_area(const BBox& a, const BBox& b) {
  double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return std::max(0.0, iw) * std::max(0.0, ih);
}

/// Intersection over union in [0, 1]; identical boxes give exactly 1.
inline double iou(const BBox& a, const BBox& b) {
  if (a == b) return a.area() > 0.0 ? 1.0 : 0.0;
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

}  // namespace advbench
