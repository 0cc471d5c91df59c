#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccdc/tensor.hpp"
#include "ccdc/vit.hpp"

namespace ccdc {

// A 3D scalar field with voxel spacing. Values are row-major over (X, Y, Z):
// index = (x*Y + y)*Z + z, matching the tokenizer's flattening.
struct Volume {
  Shape extents;  // X, Y, Z
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Array values;

  Index numel() const { return extents.empty() ? 0 : ccdc::numel(extents); }
  double at(Index x, Index y, Index z) const {
    return values[(x * extents[1] + y) * extents[2] + z];
  }
};

// Binary field sharing the Volume container on disk. 2D masks use Z=1.
struct Mask {
  Shape extents;
  std::vector<std::uint8_t> values;

  Index numel() const { return extents.empty() ? 0 : ccdc::numel(extents); }
  bool at(Index x, Index y, Index z) const {
    return values[static_cast<std::size_t>((x * extents[1] + y) * extents[2] + z)] != 0;
  }
  Index foreground() const;
};

// 8-bit RGB raster, interleaved, rows top to bottom.
struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  std::uint8_t at(Index x, Index y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t& at(Index x, Index y, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

// Container format: magic "CCDCVOL1", extents as three little-endian u32,
// spacing as three little-endian f64, values as row-major little-endian f32.
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const Mask& m);
Mask read_mask(const std::filesystem::path& path);

// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

// A patch-bag directory holds one PPM per patch plus index.json mapping each
// filename to its magnification level.
void write_patch_dir(const std::filesystem::path& dir, const std::vector<RgbImage>& patches,
                     const std::vector<Magnification>& mags);
PatchBag read_patch_dir(const std::filesystem::path& dir, const std::string& case_id);

// Pixel-level view of the same directory, for passes that rewrite patches.
struct PatchDirImages {
  std::vector<RgbImage> images;
  std::vector<Magnification> mags;
};
PatchDirImages read_patch_images(const std::filesystem::path& dir);

// Channel-major flattening used by the 2D tokenizer: f[(c*W + x)*H + y],
// values scaled to [0, 1].
Array image_to_feature(const RgbImage& img);

std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace ccdc
