#include "orstereo/geometry.hpp"

#include <cmath>
#include <string>

#include "orstereo/ops.hpp"

namespace orstereo {
namespace {

int level_after_resize(int level, int old_w, int new_w) {
  return level + static_cast<int>(std::lround(std::log2(static_cast<double>(old_w) / new_w)));
}

std::string dims(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

}  // namespace

DisparityMap::DisparityMap(Tensor<float> v, int lvl) : values(std::move(v)), level(lvl) {
  require_rank3(values, "DisparityMap");
  if (values.channels() != 1) throw ShapeError("DisparityMap: expected one channel, got " + shape_str(values.shape()));
}

OcclusionField::OcclusionField(Tensor<float> s, int lvl) : scores(std::move(s)), level(lvl) {
  require_rank3(scores, "OcclusionField");
  if (scores.channels() != 2)
    throw ShapeError("OcclusionField: expected two channels, got " + shape_str(scores.shape()));
}

Tensor<float> OcclusionField::mask() const {
  Tensor<float> m(1, height(), width());
  const std::size_t plane = scores.plane();
  for (std::size_t p = 0; p < plane; ++p) m[p] = scores[plane + p] > scores[p] ? 1.0f : 0.0f;
  return m;
}

OcclusionField OcclusionField::from_mask(const Tensor<float> &mask, int level) {
  require_rank3(mask, "OcclusionField::from_mask");
  Tensor<float> s(2, mask.height(), mask.width());
  const std::size_t plane = mask.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    bool occ = mask[p] > 0.5f;
    s[p] = occ ? 0.0f : 1.0f;
    s[plane + p] = occ ? 1.0f : 0.0f;
  }
  return OcclusionField(std::move(s), level);
}

WarpResult warp_horizontal(const ImageField &source, const DisparityMap &disparity) {
  require_same_hw(source, disparity.values, "warp_horizontal");
  WarpResult r;
  Var<float> out = ops::warp_horizontal(Var<float>(source), Var<float>(disparity.values), &r.valid);
  r.warped = out.value();
  return r;
}

DisparityMap resize_disparity(const DisparityMap &d, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1) throw ValidationError("resize_disparity: invalid target size " + dims(new_h, new_w));
  const float scale = static_cast<float>(new_w) / static_cast<float>(d.width());
  Var<float> out = ops::resize_bilinear(Var<float>(d.values), new_h, new_w, scale);
  return DisparityMap(out.value(), level_after_resize(d.level, d.width(), new_w));
}

ImageField resize_field(const ImageField &x, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1) throw ValidationError("resize_field: invalid target size " + dims(new_h, new_w));
  return ops::resize_bilinear(Var<float>(x), new_h, new_w).value();
}

OcclusionField resize_field(const OcclusionField &x, int new_h, int new_w) {
  return OcclusionField(resize_field(x.scores, new_h, new_w), level_after_resize(x.level, x.width(), new_w));
}

OcclusionField occlusion_from_disparities(const DisparityMap &left, const DisparityMap &right, float tau) {
  if (left.values.shape() != right.values.shape())
    throw ShapeError("occlusion_from_disparities: " + shape_str(left.values.shape()) + " vs " +
                     shape_str(right.values.shape()));
  if (!(tau > 0.0f)) throw ValidationError("occlusion_from_disparities: tau must be positive");
  const int h = left.height(), w = left.width();
  Tensor<float> mask(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float dl = left.values(0, y, x);
      float xs = static_cast<float>(x) - dl;
      if (!(xs >= 0.0f && xs <= static_cast<float>(w - 1))) {
        mask(0, y, x) = 1.0f;
        continue;
      }
      int x0 = std::min(static_cast<int>(std::floor(xs)), w - 1);
      int x1 = std::min(x0 + 1, w - 1);
      float f = xs - static_cast<float>(x0);
      float dr = right.values(0, y, x0) * (1.0f - f) + right.values(0, y, x1) * f;
      mask(0, y, x) = std::abs(dl - dr) > tau ? 1.0f : 0.0f;
    }
  return OcclusionField::from_mask(mask, left.level);
}

std::vector<int> axis_anchors(int image, int patch, int overlap) {
  if (patch > image)
    throw ValidationError("patch size " + std::to_string(patch) + " exceeds image size " + std::to_string(image));
  if (patch < 1) throw ValidationError("patch size must be positive");
  if (overlap < 0 || overlap >= patch)
    throw ValidationError("overlap " + std::to_string(overlap) + " must be in [0, patch)");
  const int stride = patch - overlap;
  std::vector<int> anchors;
  for (int a = 0; a + patch <= image; a += stride) anchors.push_back(a);
  if (anchors.back() + patch < image) anchors.push_back(image - patch);
  return anchors;
}

PatchGrid make_patch_grid(int image_h, int image_w, int patch_h, int patch_w, int overlap) {
  PatchGrid g{patch_h, patch_w, overlap, image_h, image_w, {}};
  try {
    auto rows = axis_anchors(image_h, patch_h, overlap);
    auto cols = axis_anchors(image_w, patch_w, overlap);
    for (int r : rows)
      for (int c : cols) g.placements.push_back({r, c});
  } catch (const ValidationError &e) {
    throw ValidationError(std::string("make_patch_grid(image ") + dims(image_h, image_w) + ", patch " +
                          dims(patch_h, patch_w) + "): " + e.what());
  }
  return g;
}

ImageField crop(const ImageField &x, int row0, int col0, int h, int w) {
  require_rank3(x, "crop");
  if (row0 < 0 || col0 < 0 || row0 + h > x.height() || col0 + w > x.width() || h < 1 || w < 1)
    throw ShapeError("crop: window " + dims(h, w) + " at (" + std::to_string(row0) + "," + std::to_string(col0) +
                     ") outside " + shape_str(x.shape()));
  ImageField out(x.channels(), h, w);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < h; ++y) {
      const float *src = &x(c, row0 + y, col0);
      std::copy(src, src + w, &out(c, y, 0));
    }
  return out;
}

ImageField blend_patches(const PatchGrid &grid, const std::vector<ImageField> &patch_results) {
  if (patch_results.size() != grid.placements.size())
    throw ShapeError("blend_patches: " + std::to_string(patch_results.size()) + " results for " +
                     std::to_string(grid.placements.size()) + " placements");
  if (patch_results.empty()) throw ShapeError("blend_patches: empty grid");
  const int c = patch_results[0].channels();
  Tensor<double> sum(c, grid.image_h, grid.image_w);
  Tensor<int> count(1, grid.image_h, grid.image_w);
  for (std::size_t i = 0; i < patch_results.size(); ++i) {
    const ImageField &p = patch_results[i];
    if (p.rank() != 3 || p.channels() != c || p.height() != grid.patch_h || p.width() != grid.patch_w)
      throw ShapeError("blend_patches: patch " + std::to_string(i) + " has shape " + shape_str(p.shape()));
    const auto [r0, c0] = grid.placements[i];
    for (int y = 0; y < grid.patch_h; ++y)
      for (int x = 0; x < grid.patch_w; ++x) {
        count(0, r0 + y, c0 + x) += 1;
        for (int ch = 0; ch < c; ++ch) sum(ch, r0 + y, c0 + x) += p(ch, y, x);
      }
  }
  ImageField out(c, grid.image_h, grid.image_w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < grid.image_h; ++y)
      for (int x = 0; x < grid.image_w; ++x) {
        int n = count(0, y, x);
        if (n == 0) throw ShapeError("blend_patches: pixel not covered by any patch");
        out(ch, y, x) = static_cast<float>(sum(ch, y, x) / n);
      }
  return out;
}

}  // namespace orstereo
