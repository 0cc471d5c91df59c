#pragma once

#include <optional>

#include "ccdc/volume_io.hpp"

namespace ccdc {

// Morphological dilation with a cubic structuring element of Chebyshev radius
// `radius`, clipped at the bounds. radius 0 is the identity.
Mask dilate_mask(const Mask& m, int radius);

// Centroid (rounded to nearest voxel) of the foreground.
std::array<Index, 3> mask_centroid(const Mask& m);

// Crop of `target` extents centered on the mask centroid; voxels falling
// outside the volume are filled with the volume minimum.
Volume crop_voi(const Volume& v, const Mask& m, const Shape& target);

// Min-max scaling onto [0, 1]; constant input maps to all zeros.
Array normalize_unit(const Array& values);

// Center crop.
Volume extract_ct_patch(const Volume& voi, const Shape& patch_extents);

struct WsiTiles {
  std::vector<RgbImage> patches;
  std::vector<Magnification> mags;
};

// Tiles the slide at each magnification. The slide is the 10X base; higher
// magnifications resample it by the magnification ratio (nearest neighbor)
// before tiling. A tile is kept iff at least half of its pixels map into the
// ROI; kept tiles are ordered by (magnification, y, x).
WsiTiles extract_wsi_patches(const RgbImage& slide, const Mask& roi,
                             const std::vector<Magnification>& mags, Index patch_side,
                             Index stride);

// Per-channel statistics in optical-density space, od = -log((v+1)/256).
struct ColorStats {
  std::array<double, 3> mean{};
  std::array<double, 3> sd{};
};

ColorStats compute_color_stats(const RgbImage& img);

enum class ColorNormalizer { Identity, OdMeanStd };

// Mean/sd matching in optical-density space; channels with (near-)zero
// variance pass through unchanged, as does everything under Identity.
RgbImage color_normalize(const RgbImage& patch, const ColorStats& reference,
                         ColorNormalizer mode = ColorNormalizer::OdMeanStd);

}  // namespace ccdc
