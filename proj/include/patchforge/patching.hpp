#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchforge/geometry.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

inline constexpr int kChannels = 3;

// H x W x 3 grid of unit-interval pixel values, row-major, channel minor.
struct ImageGrid {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  std::string id;

  static ImageGrid filled(int height, int width, double value);

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
};

// Square RGB patch, the optimization variable. Values are clamped back to
// [0,1] after every optimizer step.
struct Patch {
  int side = 0;
  std::vector<double> pixels;

  static Patch constant(int side, double value);
  static Patch uniform_random(int side, RandomStream& rng);

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * side + x) * kChannels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * side + x) * kChannels + c];
  }
  void clamp_unit();
};

// Where the patch lands for one target box: a square of side
// scale * sqrt(area(target_box)) centered on the box center, clipped to the
// image rectangle.
struct Placement {
  BBox target_box;
  BBox patch_region;
  double scale = 0.0;
};

std::vector<Placement> plan_placements(const std::vector<BBox>& boxes,
                                       int patch_side, double scale,
                                       int image_height, int image_width);

// Masked composite x * (1-M) + patch * M: the patch is bilinearly resampled
// to each placement window and written over the image; pixels outside every
// window are bit-identical to the input. Later placements overwrite earlier
// ones where they overlap.
ImageGrid apply_patch(const ImageGrid& image,
                      const std::vector<Placement>& placements,
                      const Patch& patch);

// apply_patch that also records, per pixel, which placement produced it
// (-1 when untouched), so the bilinear composite can be replayed in reverse
// to push an image-space gradient into patch space.
struct PatchApplication {
  ImageGrid image;
  std::vector<std::int32_t> owner;  // pixel_count entries
};

PatchApplication apply_patch_traced(const ImageGrid& image,
                                    const std::vector<Placement>& placements,
                                    const Patch& patch);

// Scatter dL/d(image pixels) back through the recorded bilinear taps into
// dL/d(patch pixels). patch_grad must be pre-sized to side*side*3.
void accumulate_patch_gradient(const PatchApplication& applied,
                               const std::vector<Placement>& placements,
                               int patch_side,
                               const std::vector<double>& image_grad,
                               std::vector<double>& patch_grad);

// Probabilistic scale-preserving padding: with the given probability the
// image is composited unchanged (no resampling) at the center of a
// fill-valued canvas of the target size; otherwise it is returned as is.
// The centering offset is reported so GT boxes can be translated to match.
struct PsppResult {
  ImageGrid image;
  bool padded = false;
  int offset_x = 0;
  int offset_y = 0;
};

PsppResult pspp(const ImageGrid& image, int target_height, int target_width,
                double probability, double fill, RandomStream& rng);

// Training-time patch cutout: zero a random square sub-region covering
// `fraction` of the patch side. Off by default in the pipeline.
struct CutoutRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // pixel window, half-open

  bool contains(int y, int x) const {
    return y >= y0 && y < y1 && x >= x0 && x < x1;
  }
};

CutoutRegion sample_cutout(int patch_side, double fraction, RandomStream& rng);
Patch apply_cutout(const Patch& patch, const CutoutRegion& region);

}  // namespace patchforge
