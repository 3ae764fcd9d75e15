#pragma once

#include <vector>

#include "orstereo/tensor.hpp"

namespace orstereo {

/// C x H x W real field. Photographs are nominally in [0, 1]; features are unbounded.
using ImageField = Tensor<float>;

/// 1 x H x W binary field; 1 where a warp sample landed inside the source.
using ValidityMask = Tensor<float>;

/// Horizontal offsets in pixels of this map's own grid. Level k is 1/2^k of the input width.
/// Positive d means the right-image match of left pixel x sits at x - d.
struct DisparityMap {
  Tensor<float> values;
  int level = 0;

  DisparityMap() = default;
  DisparityMap(Tensor<float> v, int lvl = 0);
  int height() const { return values.height(); }
  int width() const { return values.width(); }
};

/// Unnormalized 2-channel scores: channel 0 = non-occluded, channel 1 = occluded.
struct OcclusionField {
  Tensor<float> scores;
  int level = 0;

  OcclusionField() = default;
  OcclusionField(Tensor<float> s, int lvl = 0);
  int height() const { return scores.height(); }
  int width() const { return scores.width(); }
  /// 1 x H x W, 1 = occluded (argmax, ties to non-occluded).
  Tensor<float> mask() const;
  /// One-hot scores from a binary mask.
  static OcclusionField from_mask(const Tensor<float> &mask, int level = 0);
};

struct WarpResult {
  ImageField warped;
  ValidityMask valid;
};

WarpResult warp_horizontal(const ImageField &source, const DisparityMap &disparity);

/// Bilinear (align-corners) resampling with values multiplied by new_w / W.
DisparityMap resize_disparity(const DisparityMap &d, int new_h, int new_w);
/// Bilinear (align-corners) resampling without value scaling.
ImageField resize_field(const ImageField &x, int new_h, int new_w);
OcclusionField resize_field(const OcclusionField &x, int new_h, int new_w);

/// Hard labels from a left/right disparity pair: out of bounds or |dL - dR(x - dL)| > tau.
OcclusionField occlusion_from_disparities(const DisparityMap &left, const DisparityMap &right, float tau = 1.0f);

struct PatchPlacement {
  int row0 = 0;
  int col0 = 0;
  bool operator==(const PatchPlacement &) const = default;
};

struct PatchGrid {
  int patch_h = 0, patch_w = 0;
  int overlap = 0;
  int image_h = 0, image_w = 0;
  std::vector<PatchPlacement> placements;
};

/// Anchors at multiples of (patch - overlap), last one clamped to image - patch, duplicates dropped.
std::vector<int> axis_anchors(int image, int patch, int overlap);
PatchGrid make_patch_grid(int image_h, int image_w, int patch_h, int patch_w, int overlap);

ImageField crop(const ImageField &x, int row0, int col0, int h, int w);

/// Mean of every patch value covering each pixel (sum and count, then divide).
ImageField blend_patches(const PatchGrid &grid, const std::vector<ImageField> &patch_results);

}  // namespace orstereo
