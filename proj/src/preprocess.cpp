#include "ccdc/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace ccdc {

namespace {

// Sliding maximum along one axis, window [-radius, +radius] clipped at the
// ends. Cubic (Chebyshev) dilation is separable into three of these.
void axis_dilate(std::vector<std::uint8_t>& vals, const Shape& e, int axis, int radius) {
  const Index X = e[0], Y = e[1], Z = e[2];
  const Index len = e[static_cast<std::size_t>(axis)];
  const Index strides[3] = {Y * Z, Z, 1};
  const Index step = strides[axis];
  std::vector<std::uint8_t> line(static_cast<std::size_t>(len));
  const Index outer_a = axis == 0 ? Y : X;
  const Index outer_b = axis == 2 ? Y : Z;
  const Index stride_a = axis == 0 ? strides[1] : strides[0];
  const Index stride_b = axis == 2 ? strides[1] : strides[2];
  for (Index a = 0; a < outer_a; ++a)
    for (Index b = 0; b < outer_b; ++b) {
      const Index base = a * stride_a + b * stride_b;
      for (Index i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = vals[static_cast<std::size_t>(base + i * step)];
      for (Index i = 0; i < len; ++i) {
        std::uint8_t v = 0;
        const Index lo = std::max<Index>(0, i - radius);
        const Index hi = std::min<Index>(len - 1, i + radius);
        for (Index j = lo; j <= hi && !v; ++j) v = line[static_cast<std::size_t>(j)];
        vals[static_cast<std::size_t>(base + i * step)] = v;
      }
    }
}

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

}  // namespace

Mask dilate_mask(const Mask& m, int radius) {
  if (m.extents.size() != 3) throw ShapeError("dilate_mask expects a 3D mask");
  if (radius < 0) throw UsageError("dilation radius must be non-negative");
  if (m.foreground() == 0) throw InputError("dilate_mask: empty mask");
  Mask out = m;
  if (radius == 0) return out;
  for (int axis = 0; axis < 3; ++axis) axis_dilate(out.values, out.extents, axis, radius);
  return out;
}

std::array<Index, 3> mask_centroid(const Mask& m) {
  if (m.foreground() == 0) throw InputError("mask_centroid: empty mask");
  double sx = 0, sy = 0, sz = 0, n = 0;
  for (Index x = 0; x < m.extents[0]; ++x)
    for (Index y = 0; y < m.extents[1]; ++y)
      for (Index z = 0; z < m.extents[2]; ++z)
        if (m.at(x, y, z)) {
          sx += static_cast<double>(x);
          sy += static_cast<double>(y);
          sz += static_cast<double>(z);
          n += 1;
        }
  return {static_cast<Index>(std::llround(sx / n)), static_cast<Index>(std::llround(sy / n)),
          static_cast<Index>(std::llround(sz / n))};
}

Volume crop_voi(const Volume& v, const Mask& m, const Shape& target) {
  if (v.extents.size() != 3 || target.size() != 3) throw ShapeError("crop_voi expects 3D extents");
  if (m.extents != v.extents)
    throw ShapeError("mask extents " + shape_str(m.extents) + " do not match volume " +
                     shape_str(v.extents));
  for (Index t : target)
    if (t <= 0) throw ConfigError("crop target extents must be positive");
  const auto c = mask_centroid(m);
  const double fill = v.values.minCoeff();
  Volume out;
  out.extents = target;
  out.spacing = v.spacing;
  out.values.resize(numel(target));
  Index start[3];
  for (int i = 0; i < 3; ++i) start[i] = c[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)] / 2;
  Index w = 0;
  for (Index x = 0; x < target[0]; ++x)
    for (Index y = 0; y < target[1]; ++y)
      for (Index z = 0; z < target[2]; ++z, ++w) {
        const Index sx = start[0] + x, sy = start[1] + y, sz = start[2] + z;
        const bool inside = sx >= 0 && sx < v.extents[0] && sy >= 0 && sy < v.extents[1] &&
                            sz >= 0 && sz < v.extents[2];
        out.values[w] = inside ? v.at(sx, sy, sz) : fill;
      }
  return out;
}

Array normalize_unit(const Array& values) {
  if (values.size() == 0) return values;
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  if (hi == lo) return Array::Zero(values.size());
  return (values - lo) / (hi - lo);
}

Volume extract_ct_patch(const Volume& voi, const Shape& patch_extents) {
  if (voi.extents.size() != 3 || patch_extents.size() != 3)
    throw ShapeError("extract_ct_patch expects 3D extents");
  for (int i = 0; i < 3; ++i)
    if (patch_extents[static_cast<std::size_t>(i)] > voi.extents[static_cast<std::size_t>(i)] ||
        patch_extents[static_cast<std::size_t>(i)] <= 0)
      throw ConfigError("patch extents " + shape_str(patch_extents) + " exceed volume " +
                        shape_str(voi.extents));
  Volume out;
  out.extents = patch_extents;
  out.spacing = voi.spacing;
  out.values.resize(numel(patch_extents));
  Index start[3];
  for (int i = 0; i < 3; ++i)
    start[i] = (voi.extents[static_cast<std::size_t>(i)] - patch_extents[static_cast<std::size_t>(i)]) / 2;
  Index w = 0;
  for (Index x = 0; x < patch_extents[0]; ++x)
    for (Index y = 0; y < patch_extents[1]; ++y)
      for (Index z = 0; z < patch_extents[2]; ++z, ++w)
        out.values[w] = voi.at(start[0] + x, start[1] + y, start[2] + z);
  return out;
}

WsiTiles extract_wsi_patches(const RgbImage& slide, const Mask& roi,
                             const std::vector<Magnification>& mags, Index patch_side,
                             Index stride) {
  if (roi.extents.size() != 3 || roi.extents[2] != 1)
    throw ShapeError("slide ROI must be a 2D mask (Z extent 1)");
  if (roi.extents[0] != slide.width || roi.extents[1] != slide.height)
    throw ShapeError("ROI extents do not match the slide");
  if (patch_side <= 0 || stride <= 0) throw UsageError("patch side and stride must be positive");
  if (roi.foreground() == 0) throw InputError("extract_wsi_patches: empty ROI");

  WsiTiles out;
  for (Magnification mag : mags) {
    const Index r = mag_ratio(mag);
    const Index w = slide.width * r;
    const Index h = slide.height * r;
    for (Index ty = 0; ty + patch_side <= h; ty += stride)
      for (Index tx = 0; tx + patch_side <= w; tx += stride) {
        Index covered = 0;
        for (Index y = ty; y < ty + patch_side; ++y)
          for (Index x = tx; x < tx + patch_side; ++x)
            covered += roi.at(x / r, y / r, 0);
        if (2 * covered < patch_side * patch_side) continue;
        RgbImage patch;
        patch.width = patch_side;
        patch.height = patch_side;
        patch.pixels.resize(static_cast<std::size_t>(3 * patch_side * patch_side));
        for (Index y = 0; y < patch_side; ++y)
          for (Index x = 0; x < patch_side; ++x)
            for (int c = 0; c < 3; ++c)
              patch.at(x, y, c) = slide.at((tx + x) / r, (ty + y) / r, c);
        out.patches.push_back(std::move(patch));
        out.mags.push_back(mag);
      }
  }
  if (out.patches.empty()) throw InputError("extract_wsi_patches: no tile meets the ROI coverage rule");
  return out;
}

ColorStats compute_color_stats(const RgbImage& img) {
  if (img.pixels.empty()) throw InputError("compute_color_stats: empty image");
  ColorStats s;
  const Index n = img.width * img.height;
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sum2 = 0;
    for (Index i = 0; i < n; ++i) {
      const double od = -std::log((img.pixels[static_cast<std::size_t>(i * 3 + c)] + 1.0) / 256.0);
      sum += od;
      sum2 += od * od;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
    s.mean[static_cast<std::size_t>(c)] = mean;
    s.sd[static_cast<std::size_t>(c)] = std::sqrt(var);
  }
  return s;
}

RgbImage color_normalize(const RgbImage& patch, const ColorStats& reference,
                         ColorNormalizer mode) {
  if (mode == ColorNormalizer::Identity) return patch;
  const ColorStats own = compute_color_stats(patch);
  RgbImage out = patch;
  constexpr double kSdFloor = 1e-6;
  const Index n = patch.width * patch.height;
  for (int c = 0; c < 3; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (own.sd[ci] < kSdFloor || reference.sd[ci] < kSdFloor) continue;
    for (Index i = 0; i < n; ++i) {
      const std::size_t at = static_cast<std::size_t>(i * 3 + c);
      const double od = -std::log((patch.pixels[at] + 1.0) / 256.0);
      const double mapped = (od - own.mean[ci]) / own.sd[ci] * reference.sd[ci] + reference.mean[ci];
      const double v = 256.0 * std::exp(-mapped) - 1.0;
      out.pixels[at] = static_cast<std::uint8_t>(std::llround(clamp01(v / 255.0) * 255.0));
    }
  }
  return out;
}

}  // namespace ccdc
