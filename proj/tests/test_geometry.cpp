#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "orstereo/geometry.hpp"
#include "orstereo/ops.hpp"
#include "orstereo/synthdata.hpp"

using namespace orstereo;

namespace {

Tensor<float> row(std::initializer_list<float> v) {
  Tensor<float> t(1, 1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

Tensor<float> random_field(int c, int h, int w, std::uint64_t seed, float lo = 0, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor<float> t(c, h, w);
  for (float &v : t.data()) v = u(rng);
  return t;
}

std::vector<float> values(const Tensor<float> &t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Warp, ZeroDisparityIsIdentity) {
  Tensor<float> src = random_field(3, 5, 7, 1);
  WarpResult r = warp_horizontal(src, DisparityMap(Tensor<float>(1, 5, 7)));
  EXPECT_EQ(r.warped, src);
  for (float v : r.valid.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Warp, IntegerShift) {
  WarpResult r = warp_horizontal(row({10, 20, 30, 40}), DisparityMap(Tensor<float>(1, 1, 4, 1.0f)));
  EXPECT_EQ(values(r.warped), (std::vector<float>{0, 10, 20, 30}));
  EXPECT_EQ(values(r.valid), (std::vector<float>{0, 1, 1, 1}));
}

TEST(Warp, HalfPixelShift) {
  WarpResult r = warp_horizontal(row({10, 20, 30, 40}), DisparityMap(Tensor<float>(1, 1, 4, 0.5f)));
  EXPECT_EQ(values(r.warped), (std::vector<float>{0, 15, 25, 35}));
  EXPECT_EQ(values(r.valid), (std::vector<float>{0, 1, 1, 1}));
}

TEST(Warp, LinearInSourceOnValidPixels) {
  Tensor<float> a = random_field(2, 6, 9, 2), b = random_field(2, 6, 9, 3);
  DisparityMap d(random_field(1, 6, 9, 4, 0, 4));
  Tensor<float> mix(a.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0f * a[i] - 0.5f * b[i];
  WarpResult wa = warp_horizontal(a, d), wb = warp_horizontal(b, d), wm = warp_horizontal(mix, d);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 9; ++x) {
        if (wm.valid(0, y, x) == 0) continue;
        EXPECT_NEAR(wm.warped(c, y, x), 2.0f * wa.warped(c, y, x) - 0.5f * wb.warped(c, y, x), 1e-5);
      }
}

TEST(Warp, RejectsShapeMismatchAndNonFiniteDisparity) {
  EXPECT_THROW(warp_horizontal(Tensor<float>(1, 4, 4), DisparityMap(Tensor<float>(1, 4, 5))), ShapeError);
  Tensor<float> d(1, 1, 4);
  d[2] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(warp_horizontal(row({1, 2, 3, 4}), DisparityMap(d)), ValidationError);
}

TEST(Warp, DisparityGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  Tensor<double> src(2, 3, 12), disp(1, 3, 12), w(2, 3, 12);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double &v : src.data()) v = u(rng);
  for (double &v : w.data()) v = u(rng);
  for (double &v : disp.data()) v = std::floor(u(rng) * 2 + 3) + frac(rng);
  Var<double> s(src), d(disp, true);
  ops::dot_const(ops::warp_horizontal(s, d), w).backward();
  Tensor<double> grad = d.grad();
  const double h = 1e-3;
  double num_sq = 0, diff_sq = 0;
  for (std::size_t i = 0; i < disp.size(); ++i) {
    auto f = [&](double t) {
      Tensor<double> p = disp;
      p[i] += t;
      return ops::dot_const(ops::warp_horizontal(s, Var<double>(p)), w).value()[0];
    };
    double numeric = (f(h) - f(-h)) / (2 * h);
    num_sq += numeric * numeric;
    diff_sq += (numeric - grad[i]) * (numeric - grad[i]);
  }
  EXPECT_LE(std::sqrt(diff_sq), 1e-4 * std::sqrt(num_sq));
}

TEST(ResizeDisparity, ScalesValuesByWidthRatio) {
  DisparityMap up = resize_disparity(DisparityMap(Tensor<float>(1, 4, 4, 3.0f)), 8, 8);
  for (float v : up.values.data()) EXPECT_FLOAT_EQ(v, 6.0f);
  DisparityMap down = resize_disparity(DisparityMap(Tensor<float>(1, 8, 8, 6.0f)), 4, 4);
  for (float v : down.values.data()) EXPECT_FLOAT_EQ(v, 3.0f);
}

TEST(ResizeDisparity, IdentitySizeAndRoundTrip) {
  DisparityMap d(random_field(1, 5, 6, 9, 0, 10));
  EXPECT_EQ(resize_disparity(d, 5, 6).values, d.values);
  DisparityMap c(Tensor<float>(1, 4, 4, 2.5f));
  DisparityMap back = resize_disparity(resize_disparity(c, 8, 8), 4, 4);
  EXPECT_EQ(back.values, c.values);
}

TEST(ResizeDisparity, UpdatesLevelAndRejectsBadSize) {
  DisparityMap d(Tensor<float>(1, 4, 8, 1.0f), 2);
  EXPECT_EQ(resize_disparity(d, 8, 16).level, 1);
  EXPECT_THROW(resize_disparity(d, 0, 4), ValidationError);
  EXPECT_THROW(resize_disparity(d, 4, -1), ValidationError);
}

TEST(ResizeField, AlignCornersAndConstants) {
  EXPECT_EQ(values(resize_field(row({0, 2}), 1, 3)), (std::vector<float>{0, 1, 2}));
  ImageField c(3, 5, 5, 0.25f);
  for (float v : values(resize_field(c, 9, 13))) EXPECT_FLOAT_EQ(v, 0.25f);
  ImageField r = random_field(2, 4, 6, 11);
  EXPECT_EQ(resize_field(r, 4, 6), r);
  ImageField big = resize_field(r, 9, 11);
  EXPECT_FLOAT_EQ(big(1, 8, 10), r(1, 3, 5));
  EXPECT_FLOAT_EQ(big(0, 0, 0), r(0, 0, 0));
}

TEST(OcclusionFromDisparities, Examples) {
  OcclusionField none = occlusion_from_disparities(DisparityMap(Tensor<float>(1, 3, 5)), DisparityMap(Tensor<float>(1, 3, 5)));
  for (float v : values(none.mask())) EXPECT_EQ(v, 0.0f);

  OcclusionField border =
      occlusion_from_disparities(DisparityMap(Tensor<float>(1, 1, 4, 1.0f)), DisparityMap(Tensor<float>(1, 1, 4, 1.0f)));
  EXPECT_EQ(values(border.mask()), (std::vector<float>{1, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(border.scores[i] + border.scores[4 + i], 1.0f);

  OcclusionField all = occlusion_from_disparities(DisparityMap(Tensor<float>(1, 2, 4)),
                                                  DisparityMap(Tensor<float>(1, 2, 4, 5.0f)), 1.0f);
  for (float v : values(all.mask())) EXPECT_EQ(v, 1.0f);

  EXPECT_THROW(occlusion_from_disparities(DisparityMap(Tensor<float>(1, 2, 4)), DisparityMap(Tensor<float>(1, 2, 5))),
               ShapeError);
}

TEST(PatchGrid, AnchorExamples) {
  std::vector<int> a = axis_anchors(4096, 512, 32);
  ASSERT_EQ(a.size(), 9u);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(a[static_cast<std::size_t>(i)], 480 * i);
  EXPECT_EQ(a.back(), 3584);
  EXPECT_EQ(axis_anchors(512, 512, 32), std::vector<int>{0});
  EXPECT_EQ(axis_anchors(256, 128, 32), (std::vector<int>{0, 96, 128}));
}

TEST(PatchGrid, CoversImageAndRejectsBadArguments) {
  PatchGrid g = make_patch_grid(200, 300, 64, 96, 16);
  Tensor<int> cover(1, 200, 300);
  for (auto p : g.placements) {
    EXPECT_LE(p.row0 + 64, 200);
    EXPECT_LE(p.col0 + 96, 300);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 96; ++x) cover(0, p.row0 + y, p.col0 + x) = 1;
  }
  for (int v : cover.data()) EXPECT_EQ(v, 1);
  EXPECT_THROW(make_patch_grid(100, 100, 128, 64, 0), ValidationError);
  EXPECT_THROW(make_patch_grid(256, 256, 128, 128, 128), ValidationError);
}

TEST(BlendPatches, Examples) {
  PatchGrid one = make_patch_grid(4, 6, 4, 6, 0);
  ImageField p = random_field(2, 4, 6, 5);
  EXPECT_EQ(blend_patches(one, {p}), p);

  PatchGrid two = make_patch_grid(4, 6, 4, 4, 2);
  ASSERT_EQ(two.placements.size(), 2u);
  ImageField out = blend_patches(two, {ImageField(1, 4, 4, 2.0f), ImageField(1, 4, 4, 4.0f)});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out(0, y, x), x < 2 ? 2.0f : x < 4 ? 3.0f : 4.0f);

  PatchGrid many = make_patch_grid(256, 256, 128, 128, 32);
  std::vector<ImageField> consts(many.placements.size(), ImageField(1, 128, 128, 0.7f));
  for (float v : values(blend_patches(many, consts))) EXPECT_EQ(v, 0.7f);
  EXPECT_THROW(blend_patches(many, {}), ShapeError);
}

TEST(BlendPatches, PermutationInvariant) {
  PatchGrid g = make_patch_grid(160, 224, 64, 64, 16);
  std::vector<ImageField> patches;
  for (std::size_t i = 0; i < g.placements.size(); ++i) patches.push_back(random_field(2, 64, 64, 100 + i));
  ImageField ref = blend_patches(g, patches);
  std::vector<std::size_t> perm(patches.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::mt19937_64 rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  PatchGrid pg = g;
  std::vector<ImageField> pp;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pg.placements[i] = g.placements[perm[i]];
    pp.push_back(patches[perm[i]]);
  }
  EXPECT_EQ(blend_patches(pg, pp), ref);
}

TEST(OcclusionFromDisparities, AgreesWithGeneratorOnHundredScenes) {
  for (int i = 0; i < 100; ++i) {
    SceneSpec s;
    s.seed = 5000 + static_cast<std::uint64_t>(i);
    TrainSample t = generate_scene(s);
    double a = occlusion_agreement(occlusion_from_disparities(t.disp_left, t.disp_right, 1.0f), t.occlusion);
    EXPECT_GE(a, 0.99) << "scene seed " << s.seed;
  }
}
