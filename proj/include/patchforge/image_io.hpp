#pragma once

#include <filesystem>

#include "patchforge/patching.hpp"

namespace patchforge {

// Loads a PNG or JPEG file (chosen by magic bytes) as an RGB grid with
// values in [0,1]. Grayscale, palette and alpha inputs are converted.
ImageGrid load_image(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG; values are clamped to [0,1] and quantized by
// round(v * 255).
void save_png(const ImageGrid& image, const std::filesystem::path& path);

// Patch persistence: side x side 8-bit RGB PNG. Loading dequantizes by
// /255, so a save/load round trip moves each channel by at most 1/510.
void save_patch_png(const Patch& patch, const std::filesystem::path& path);
Patch load_patch_png(const std::filesystem::path& path);

// Reads only the header and returns (height, width).
std::pair<int, int> probe_image_extent(const std::filesystem::path& path);

}  // namespace patchforge
