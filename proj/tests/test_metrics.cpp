#include <gtest/gtest.h>

#include "orstereo/metrics.hpp"
#include "test_util.hpp"

using namespace orstereo;

namespace {

OcclusionField mask_field(const Tensor<float> &m) { return OcclusionField::from_mask(m); }

Tensor<float> quarter_occluded() {
  Tensor<float> m(1, 4, 4);
  for (int x = 0; x < 4; ++x) m(0, 0, x) = 1;
  return m;
}

}  // namespace

TEST(Epe, Examples) {
  DisparityMap gt(testutil::random_tensor<float>({1, 6, 8}, 0, 20, 1));
  EXPECT_EQ(epe(gt, gt), 0.0);
  DisparityMap off = gt;
  for (float &v : off.values.data()) v += 2;
  EXPECT_NEAR(epe(off, gt), 2.0, 1e-5);
  DisparityMap half(Tensor<float>(1, 2, 2, 1.0f)), ref(Tensor<float>(1, 2, 2, 1.0f));
  half.values[0] = 5;
  half.values[3] = -3;
  EXPECT_DOUBLE_EQ(epe(half, ref), 2.0);
}

TEST(Epe, Symmetric) {
  DisparityMap a(testutil::random_tensor<float>({1, 9, 7}, 0, 30, 2)), b(testutil::random_tensor<float>({1, 9, 7}, 0, 30, 3));
  EXPECT_EQ(epe(a, b), epe(b, a));
  EXPECT_THROW(epe(a, DisparityMap(Tensor<float>(1, 9, 8))), ShapeError);
}

TEST(Epe, MaskExcludesPoisonedPixels) {
  DisparityMap gt(testutil::random_tensor<float>({1, 8, 8}, 0, 10, 4));
  DisparityMap pred(testutil::random_tensor<float>({1, 8, 8}, 0, 10, 5));
  Tensor<float> keep(1, 8, 8);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i % 3 ? 1.0f : 0.0f;
  double before = epe(pred, gt, &keep);
  double bad_before = bad_pixel_rate(pred, gt, 1.0, &keep);
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i] == 0) pred.values[i] = 1e6f;
  EXPECT_EQ(epe(pred, gt, &keep), before);
  EXPECT_EQ(bad_pixel_rate(pred, gt, 1.0, &keep), bad_before);
}

TEST(BadPixelRate, CountsStrictlyAboveThreshold) {
  DisparityMap gt(Tensor<float>(1, 1, 4)), pred(Tensor<float>(1, 1, 4));
  pred.values[0] = 0.5f;
  pred.values[1] = 1.0f;
  pred.values[2] = 2.0f;
  pred.values[3] = 4.0f;
  EXPECT_DOUBLE_EQ(bad_pixel_rate(pred, gt, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(bad_pixel_rate(pred, gt, 3.0), 0.25);
}

TEST(OcclusionMetrics, Examples) {
  OcclusionField gt = mask_field(quarter_occluded());
  OcclusionScores same = occlusion_metrics(gt, gt);
  EXPECT_DOUBLE_EQ(same.precision, 1);
  EXPECT_DOUBLE_EQ(same.recall, 1);
  EXPECT_DOUBLE_EQ(same.f1, 1);
  EXPECT_FALSE(same.empty);

  OcclusionScores none = occlusion_metrics(mask_field(Tensor<float>(1, 4, 4)), gt);
  EXPECT_EQ(none.recall, 0);
  EXPECT_TRUE(none.empty);

  OcclusionScores all = occlusion_metrics(mask_field(Tensor<float>(1, 4, 4, 1.0f)), gt);
  EXPECT_DOUBLE_EQ(all.precision, 0.25);
  EXPECT_DOUBLE_EQ(all.recall, 1);
  EXPECT_DOUBLE_EQ(all.f1, 0.4);
  EXPECT_FALSE(all.empty);

  OcclusionScores no_truth = occlusion_metrics(gt, mask_field(Tensor<float>(1, 4, 4)));
  EXPECT_TRUE(no_truth.empty);
  EXPECT_EQ(no_truth.f1, 0);
}

TEST(MetricReport, CsvIsDeterministicWithDocumentedHeader) {
  MetricReport rep;
  rep.label = "demo";
  for (int i = 0; i < 3; ++i) {
    DisparityMap gt(testutil::random_tensor<float>({1, 8, 8}, 0, 10, 10 + i));
    DisparityMap pred(testutil::random_tensor<float>({1, 8, 8}, 0, 10, 20 + i));
    Tensor<float> m = testutil::random_tensor<float>({1, 8, 8}, 0, 1, 30 + i);
    for (float &v : m.data()) v = v > 0.8f;
    rep.rows.push_back(evaluate_scene("s" + std::to_string(i), pred, mask_field(m), gt, mask_field(m)));
  }
  std::string a = rep.to_csv(), b = rep.to_csv();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("# ", 0), 0u);
  EXPECT_NE(a.find("viridis"), std::string::npos);
  EXPECT_NE(a.find("scene,epe_all,epe_nonoccluded,bad_1,bad_3,occ_precision,occ_recall,occ_f1"), std::string::npos);
  EXPECT_NE(a.find("\nmean,"), std::string::npos);
  MetricRow agg = rep.aggregate();
  EXPECT_NEAR(agg.epe_all, (rep.rows[0].epe_all + rep.rows[1].epe_all + rep.rows[2].epe_all) / 3, 1e-12);
  for (const MetricRow &r : rep.rows) {
    EXPECT_GE(r.bad_1, r.bad_3);
    EXPECT_GE(r.epe_all, 0);
    EXPECT_DOUBLE_EQ(r.occ_f1, 1.0);
  }
  EXPECT_NE(rep.to_table().find("mean"), std::string::npos);
}

TEST(Colorize, EndpointsAndClamping) {
  Tensor<float> t(1, 1, 3);
  t[0] = -5;
  t[1] = 0;
  t[2] = 10;
  ImageField c = colorize_disparity(DisparityMap(t), 0, 10);
  ASSERT_EQ(c.shape(), (Shape{3, 1, 3}));
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(c(ch, 0, 0), c(ch, 0, 1));
  EXPECT_GT(c(1, 0, 2), c(1, 0, 0));
  for (float v : c.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}
