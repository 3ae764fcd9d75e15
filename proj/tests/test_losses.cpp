#include <gtest/gtest.h>

#include <cmath>

#include "orstereo/losses.hpp"
#include "orstereo/ops.hpp"
#include "test_util.hpp"

using namespace orstereo;

namespace {

Var<double> unit() { return Var<double>(Tensor<double>::scalar(1.0)); }

OcclusionField labels_one_pixel(int label) {
  Tensor<float> m(1, 1, 1, float(label));
  return OcclusionField::from_mask(m);
}

OcclusionField scores_one_pixel(float s0, float s1) {
  Tensor<float> s(2, 1, 1);
  s[0] = s0;
  s[1] = s1;
  return OcclusionField(s);
}

}  // namespace

TEST(SmoothL1, Examples) {
  DisparityMap t(Tensor<float>(1, 1, 1, 2.0f));
  EXPECT_EQ(smooth_l1(t, t), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(DisparityMap(Tensor<float>(1, 1, 1, 2.5f)), t), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(DisparityMap(Tensor<float>(1, 1, 1, 5.0f)), t), 2.5);
}

TEST(SmoothL1, MaskRestrictsMean) {
  Tensor<float> p(1, 1, 2), g(1, 1, 2), m(1, 1, 2);
  p[0] = 3;
  p[1] = 100;
  m[0] = 1;
  EXPECT_DOUBLE_EQ(smooth_l1(DisparityMap(p), DisparityMap(g), &m), 2.5);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy_occ(scores_one_pixel(0, 0), labels_one_pixel(0)), std::log(2.0), 1e-6);
  EXPECT_NEAR(cross_entropy_occ(scores_one_pixel(0, 0), labels_one_pixel(1)), std::log(2.0), 1e-6);
  EXPECT_LT(cross_entropy_occ(scores_one_pixel(20, -20), labels_one_pixel(0)), 1e-8);
  EXPECT_NEAR(cross_entropy_occ(scores_one_pixel(-20, 20), labels_one_pixel(0)), 40.0, 1e-4);
}

TEST(TotalLoss, UnitTermsWithDefaultWeights) {
  LossResult<double> r = combine_loss_terms(unit(), unit(), {unit()}, {unit()}, unit(), LossWeights{});
  EXPECT_NEAR(r.total.value()[0], 38.4, 1e-12);
  EXPECT_NEAR(r.terms[0], 32.0, 1e-12);
  EXPECT_NEAR(r.terms[1], 2.0, 1e-12);
  EXPECT_NEAR(r.terms[2], 1.6, 1e-12);
  EXPECT_NEAR(r.terms[3], 0.8, 1e-12);
  EXPECT_NEAR(r.terms[4], 2.0, 1e-12);
}

TEST(TotalLoss, IterationWeightsFavourLaterIterations) {
  EXPECT_DOUBLE_EQ(iteration_weight(0.8, 1, 2), 0.8 * 0.8);
  EXPECT_DOUBLE_EQ(iteration_weight(0.8, 2, 2), 0.8);
  for (int n = 1; n <= 6; ++n) EXPECT_DOUBLE_EQ(iteration_weight(0.8, n, n), 0.8);
  Var<double> a(Tensor<double>::scalar(1.0)), b(Tensor<double>::scalar(0.0));
  LossWeights w;
  w.lam_d4 = w.lam_o = w.lam_o1 = w.lam_d = 0;
  w.lam_d1 = 1;
  EXPECT_NEAR(combine_loss_terms(b, b, {a, b}, {b, b}, b, w).total.value()[0], 0.64, 1e-12);
  EXPECT_NEAR(combine_loss_terms(b, b, {b, a}, {b, b}, b, w).total.value()[0], 0.8, 1e-12);
}

TEST(TotalLoss, WeightLinearity) {
  std::vector<Var<double>> terms;
  for (double v : {0.3, 1.7, 0.9, 2.2, 0.4, 1.1, 0.6}) terms.push_back(Var<double>(Tensor<double>::scalar(v)));
  LossWeights w;
  LossResult<double> a = combine_loss_terms(terms[0], terms[1], {terms[2], terms[3]}, {terms[4], terms[5]}, terms[6], w);
  w.lam_d4 *= 2;
  LossResult<double> b = combine_loss_terms(terms[0], terms[1], {terms[2], terms[3]}, {terms[4], terms[5]}, terms[6], w);
  EXPECT_DOUBLE_EQ(b.terms[0], 2 * a.terms[0]);
  for (int k = 1; k < 5; ++k) EXPECT_DOUBLE_EQ(b.terms[static_cast<std::size_t>(k)], a.terms[static_cast<std::size_t>(k)]);
}

TEST(TotalLoss, RejectsNonFiniteTermNamingIt) {
  Var<double> bad(Tensor<double>::scalar(std::nan("")));
  try {
    combine_loss_terms(unit(), unit(), {unit()}, {bad}, unit(), LossWeights{});
    FAIL() << "expected NumericHealthError";
  } catch (const NumericHealthError &e) {
    EXPECT_NE(std::string(e.what()).find("refine_occlusion"), std::string::npos);
  }
}

TEST(TotalLoss, WeightValidation) {
  LossWeights w;
  w.gamma_d = 0;
  EXPECT_THROW(w.validate(), ValidationError);
  w = LossWeights{};
  w.lam_o = -1;
  EXPECT_THROW(w.validate(), ValidationError);
}

namespace {

Phase1Output<double> perfect_output(const Tensor<double> &gt, const Tensor<double> &labels, int n) {
  LossTargets<double> t = make_loss_targets(gt, labels);
  auto logits = [](const Tensor<double> &p) {
    Tensor<double> s(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) s[i] = p[i] > 0.5 ? 30.0 : -30.0;
    return s;
  };
  Phase1Output<double> out;
  out.d4 = Var<double>(t.disparity_base);
  out.occ_init = Var<double>(logits(t.occ_base));
  out.base_refine = Var<double>(t.disparity_refine);
  for (int i = 0; i < n; ++i)
    out.history.push_back({Var<double>(Tensor<double>(t.disparity_refine.shape())), Var<double>(logits(t.occ_refine))});
  out.disparity = Var<double>(gt);
  return out;
}

}  // namespace

TEST(TotalLoss, PerfectPredictionsLeaveOnlySaturatedCrossEntropy) {
  Tensor<double> gt(1, 32, 32, 8.0), labels(2, 32, 32);
  for (std::size_t p = 0; p < labels.plane(); ++p) labels[p] = 1;
  LossTargets<double> t = make_loss_targets(gt, labels);
  Phase1Output<double> out = perfect_output(gt, labels, 2);
  LossResult<double> r = total_loss(out, t, LossWeights{}, 2);
  EXPECT_LT(r.total.value()[0], 1e-6);
  EXPECT_EQ(r.terms[0], 0.0);
  EXPECT_EQ(r.terms[2], 0.0);
  EXPECT_EQ(r.terms[4], 0.0);
  EXPECT_THROW(total_loss(out, t, LossWeights{}, 3), ValidationError);
}

TEST(TotalLoss, TargetsUseLevelUnits) {
  Tensor<double> gt(1, 32, 64, 16.0), labels(2, 32, 64);
  LossTargets<double> t = make_loss_targets(gt, labels);
  EXPECT_EQ(t.disparity_base.shape(), (Shape{1, 2, 4}));
  EXPECT_EQ(t.disparity_refine.shape(), (Shape{1, 8, 16}));
  for (double v : t.disparity_base.data()) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : t.disparity_refine.data()) EXPECT_DOUBLE_EQ(v, 4.0);
  EXPECT_THROW(make_loss_targets(Tensor<double>(1, 24, 64), Tensor<double>(2, 24, 64)), ShapeError);
}

TEST(TotalLoss, TermsAreNonNegative) {
  Tensor<double> gt = testutil::random_tensor<double>({1, 32, 32}, 0, 10, 1);
  Tensor<double> labels(2, 32, 32);
  for (std::size_t p = 0; p < labels.plane(); ++p) labels[p + (p % 3 == 0 ? labels.plane() : 0)] = 1;
  Phase1Output<double> out;
  out.d4 = Var<double>(testutil::random_tensor<double>({1, 2, 2}, -2, 2, 2));
  out.occ_init = Var<double>(testutil::random_tensor<double>({2, 2, 2}, -5, 5, 3));
  out.base_refine = Var<double>(testutil::random_tensor<double>({1, 8, 8}, -2, 2, 4));
  out.history.push_back({Var<double>(testutil::random_tensor<double>({1, 8, 8}, -2, 2, 5)),
                         Var<double>(testutil::random_tensor<double>({2, 8, 8}, -5, 5, 6))});
  out.disparity = Var<double>(testutil::random_tensor<double>({1, 32, 32}, -5, 15, 7));
  LossResult<double> r = total_loss(out, make_loss_targets(gt, labels), LossWeights{}, 1);
  for (double v : r.terms) EXPECT_GE(v, 0.0);
}
