#include "patchforge/patching.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchforge {

ImageGrid ImageGrid::filled(int height, int width, double value) {
  ImageGrid g;
  g.height = height;
  g.width = width;
  g.pixels.assign(static_cast<std::size_t>(height) * width * kChannels, value);
  return g;
}

Patch Patch::constant(int side, double value) {
  if (side < 2) throw std::invalid_argument("Patch: side must be >= 2");
  Patch p;
  p.side = side;
  p.pixels.assign(static_cast<std::size_t>(side) * side * kChannels, value);
  return p;
}

Patch Patch::uniform_random(int side, RandomStream& rng) {
  Patch p = constant(side, 0.0);
  for (double& v : p.pixels) v = rng.uniform();
  return p;
}

void Patch::clamp_unit() {
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

std::vector<Placement> plan_placements(const std::vector<BBox>& boxes,
                                       int patch_side, double scale,
                                       int image_height, int image_width) {
  if (scale <= 0.0) {
    throw std::invalid_argument("plan_placements: scale must be positive");
  }
  if (patch_side < 2) {
    throw std::invalid_argument("plan_placements: patch side must be >= 2");
  }
  std::vector<Placement> placements;
  placements.reserve(boxes.size());
  for (const BBox& box : boxes) {
    const double side = scale * std::sqrt(area(box));
    const double cx = box.center_x();
    const double cy = box.center_y();
    const double x1 = std::max(0.0, cx - 0.5 * side);
    const double y1 = std::max(0.0, cy - 0.5 * side);
    const double x2 = std::min(static_cast<double>(image_width), cx + 0.5 * side);
    const double y2 = std::min(static_cast<double>(image_height), cy + 0.5 * side);
    if (x2 <= x1 || y2 <= y1) continue;  // clipped away entirely
    placements.push_back({box, BBox(x1, y1, x2, y2), scale});
  }
  return placements;
}

namespace {

struct Window {
  int x0, y0, x1, y1;  // half-open pixel window
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

Window rasterize(const BBox& region, int image_height, int image_width) {
  Window w;
  w.x0 = std::max(0, static_cast<int>(std::llround(region.x1)));
  w.y0 = std::max(0, static_cast<int>(std::llround(region.y1)));
  w.x1 = std::min(image_width, static_cast<int>(std::llround(region.x2)));
  w.y1 = std::min(image_height, static_cast<int>(std::llround(region.y2)));
  return w;
}

// Bilinear taps of the patch at destination pixel (dy, dx) of a window.
struct Taps {
  int ix0, ix1, iy0, iy1;
  double w00, w01, w10, w11;
};

Taps patch_taps(const Window& win, int patch_side, int dy, int dx) {
  const double sx =
      (dx + 0.5) * static_cast<double>(patch_side) / win.width() - 0.5;
  const double sy =
      (dy + 0.5) * static_cast<double>(patch_side) / win.height() - 0.5;
  const double fx0 = std::floor(sx);
  const double fy0 = std::floor(sy);
  const double ax = sx - fx0;
  const double ay = sy - fy0;
  Taps t;
  t.ix0 = std::clamp(static_cast<int>(fx0), 0, patch_side - 1);
  t.ix1 = std::clamp(static_cast<int>(fx0) + 1, 0, patch_side - 1);
  t.iy0 = std::clamp(static_cast<int>(fy0), 0, patch_side - 1);
  t.iy1 = std::clamp(static_cast<int>(fy0) + 1, 0, patch_side - 1);
  t.w00 = (1.0 - ay) * (1.0 - ax);
  t.w01 = (1.0 - ay) * ax;
  t.w10 = ay * (1.0 - ax);
  t.w11 = ay * ax;
  return t;
}

}  // namespace

PatchApplication apply_patch_traced(const ImageGrid& image,
                                    const std::vector<Placement>& placements,
                                    const Patch& patch) {
  PatchApplication out;
  out.image = image;
  out.owner.assign(image.pixel_count(), -1);
  for (std::size_t p = 0; p < placements.size(); ++p) {
    const Window win =
        rasterize(placements[p].patch_region, image.height, image.width);
    if (win.empty()) continue;
    for (int dy = 0; dy < win.height(); ++dy) {
      for (int dx = 0; dx < win.width(); ++dx) {
        const Taps t = patch_taps(win, patch.side, dy, dx);
        const int y = win.y0 + dy;
        const int x = win.x0 + dx;
        for (int c = 0; c < kChannels; ++c) {
          out.image.at(y, x, c) = t.w00 * patch.at(t.iy0, t.ix0, c) +
                                  t.w01 * patch.at(t.iy0, t.ix1, c) +
                                  t.w10 * patch.at(t.iy1, t.ix0, c) +
                                  t.w11 * patch.at(t.iy1, t.ix1, c);
        }
        out.owner[static_cast<std::size_t>(y) * image.width + x] =
            static_cast<std::int32_t>(p);
      }
    }
  }
  return out;
}

ImageGrid apply_patch(const ImageGrid& image,
                      const std::vector<Placement>& placements,
                      const Patch& patch) {
  return apply_patch_traced(image, placements, patch).image;
}

void accumulate_patch_gradient(const PatchApplication& applied,
                               const std::vector<Placement>& placements,
                               int patch_side,
                               const std::vector<double>& image_grad,
                               std::vector<double>& patch_grad) {
  const ImageGrid& img = applied.image;
  if (image_grad.size() != img.pixels.size()) {
    throw std::invalid_argument(
        "accumulate_patch_gradient: image gradient shape mismatch");
  }
  auto patch_index = [patch_side](int y, int x, int c) {
    return (static_cast<std::size_t>(y) * patch_side + x) * kChannels + c;
  };
  for (std::size_t p = 0; p < placements.size(); ++p) {
    const Window win = rasterize(placements[p].patch_region, img.height,
                                 img.width);
    if (win.empty()) continue;
    for (int dy = 0; dy < win.height(); ++dy) {
      for (int dx = 0; dx < win.width(); ++dx) {
        const int y = win.y0 + dy;
        const int x = win.x0 + dx;
        // Only the placement that actually produced the pixel propagates
        // gradient; earlier overlapping writes were overwritten.
        if (applied.owner[static_cast<std::size_t>(y) * img.width + x] !=
            static_cast<std::int32_t>(p)) {
          continue;
        }
        const Taps t = patch_taps(win, patch_side, dy, dx);
        for (int c = 0; c < kChannels; ++c) {
          const double g =
              image_grad[(static_cast<std::size_t>(y) * img.width + x) *
                             kChannels +
                         c];
          if (g == 0.0) continue;
          patch_grad[patch_index(t.iy0, t.ix0, c)] += t.w00 * g;
          patch_grad[patch_index(t.iy0, t.ix1, c)] += t.w01 * g;
          patch_grad[patch_index(t.iy1, t.ix0, c)] += t.w10 * g;
          patch_grad[patch_index(t.iy1, t.ix1, c)] += t.w11 * g;
        }
      }
    }
  }
}

PsppResult pspp(const ImageGrid& image, int target_height, int target_width,
                double probability, double fill, RandomStream& rng) {
  if (target_height < image.height || target_width < image.width) {
    throw std::invalid_argument("pspp: target smaller than image");
  }
  if (probability < 0.0 || probability > 1.0) {
    throw std::invalid_argument("pspp: probability must lie in [0,1]");
  }
  if (fill < 0.0 || fill > 1.0) {
    throw std::invalid_argument("pspp: fill must lie in [0,1]");
  }

  const double r = rng.uniform();
  PsppResult result;
  if (r >= probability) {
    result.image = image;
    return result;
  }

  result.padded = true;
  result.offset_x = (target_width - image.width) / 2;
  result.offset_y = (target_height - image.height) / 2;
  result.image = ImageGrid::filled(target_height, target_width, fill);
  result.image.id = image.id;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        result.image.at(y + result.offset_y, x + result.offset_x, c) =
            image.at(y, x, c);
      }
    }
  }
  return result;
}

CutoutRegion sample_cutout(int patch_side, double fraction,
                           RandomStream& rng) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw std::invalid_argument("sample_cutout: fraction must lie in (0,1]");
  }
  const int side = std::max(1, static_cast<int>(std::llround(
                                   fraction * patch_side)));
  const int max_off = patch_side - side;
  CutoutRegion r;
  r.x0 = max_off > 0 ? static_cast<int>(rng.uniform_index(max_off + 1)) : 0;
  r.y0 = max_off > 0 ? static_cast<int>(rng.uniform_index(max_off + 1)) : 0;
  r.x1 = r.x0 + side;
  r.y1 = r.y0 + side;
  return r;
}

Patch apply_cutout(const Patch& patch, const CutoutRegion& region) {
  Patch out = patch;
  for (int y = std::max(0, region.y0); y < std::min(patch.side, region.y1);
       ++y) {
    for (int x = std::max(0, region.x0); x < std::min(patch.side, region.x1);
         ++x) {
      for (int c = 0; c < kChannels; ++c) out.at(y, x, c) = 0.0;
    }
  }
  return out;
}

}  // namespace patchforge
