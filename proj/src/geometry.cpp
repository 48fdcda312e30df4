#include "patchforge/geometry.hpp"

#include <algorithm>

namespace patchforge {

double area(const BBox& b) { return b.width() * b.height(); }

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double union_area(const BBox& a, const BBox& b) {
  return area(a) + area(b) - intersection_area(a, b);
}

double iou(const BBox& a, const BBox& b) {
  const double u = union_area(a, b);
  if (u <= 0.0) return 0.0;
  return intersection_area(a, b) / u;
}

double smoothed_iou(const BBox& a, const BBox& b, double eps) {
  if (eps <= 0.0) {
    throw std::invalid_argument("smoothed_iou: eps must be positive");
  }
  return (intersection_area(a, b) + eps) / (union_area(a, b) + eps);
}

}  // namespace patchforge
