#pragma once

#include <stdexcept>

namespace patchforge {

// Axis-aligned box in pixel coordinates, corner format: (x1,y1) top-left,
// (x2,y2) bottom-right. Treated as a half-open real region, so boxes that
// share only an edge or a corner have zero intersection area. Zero-area
// boxes are allowed; negative extent is rejected at construction.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  BBox() = default;

  BBox(double x1_, double y1_, double x2_, double y2_)
      : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
    if (x2 < x1 || y2 < y1) {
      throw std::invalid_argument("BBox: negative extent (x2 < x1 or y2 < y1)");
    }
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool operator==(const BBox&) const = default;
};

double area(const BBox& b);

double intersection_area(const BBox& a, const BBox& b);

double union_area(const BBox& a, const BBox& b);

// Intersection over union; 0 when the union has zero area (two degenerate
// boxes), so a zero-area detection never blocks the zero-overlap test.
double iou(const BBox& a, const BBox& b);

// (|a∩b| + eps) / (|a∪b| + eps). Strictly positive for every pair and
// continuous in the box coordinates, which keeps the loss differentiable
// even for disjoint boxes. eps must be > 0.
double smoothed_iou(const BBox& a, const BBox& b, double eps);

}  // namespace patchforge
