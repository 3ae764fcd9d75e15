#include <gtest/gtest.h>

#include "orstereo/gradcheck.hpp"
#include "orstereo/ops.hpp"
#include "test_util.hpp"

using namespace orstereo;

namespace {

GradCheckGroup smooth_group() {
  return {"x", Var<double>(testutil::random_tensor<double>({1, 3, 4}, -1, 1, 3), true)};
}

std::function<Var<double>()> smooth_function(const GradCheckGroup &g, const Tensor<double> &w) {
  return [leaf = g.leaf, w] { return ops::dot_const(ops::tanh(ops::mul(leaf, leaf)), w); };
}

}  // namespace

TEST(GradCheck, SmoothFunctionPasses) {
  GradCheckGroup g = smooth_group();
  Tensor<double> w = testutil::random_tensor<double>({1, 3, 4}, -1, 1, 4);
  GradCheckEntry e = check_scalar_function("tanh_square", g, smooth_function(g, w), GradCheckOptions{}, 1);
  EXPECT_TRUE(e.passed) << e.max_rel_error;
  EXPECT_EQ(e.probes, 12 + GradCheckOptions{}.directions);
  EXPECT_LT(e.max_rel_error, 1e-6);
}

TEST(GradCheck, ScaledAnalyticGradientFails) {
  GradCheckGroup g = smooth_group();
  Tensor<double> w = testutil::random_tensor<double>({1, 3, 4}, -1, 1, 4);
  GradCheckEntry e = check_scalar_function("tanh_square", g, smooth_function(g, w), GradCheckOptions{}, 1, 1.001);
  EXPECT_FALSE(e.passed);
  EXPECT_GT(e.max_rel_error, 1e-4);
}

TEST(GradCheck, KinksAreDiscardedNotCounted) {
  Var<double> src(testutil::random_tensor<double>({1, 1, 8}, -1, 1, 6));
  GradCheckGroup g{"disparity", Var<double>(Tensor<double>(1, 1, 8, 1.5), true)};
  g.leaf.mutable_value()[4] = 2.0002;
  g.leaf.mutable_value()[6] = 2.9996;
  Tensor<double> w(1, 1, 8, 1.0);
  auto f = [src, leaf = g.leaf, w] { return ops::dot_const(ops::warp_horizontal(src, leaf), w); };
  GradCheckOptions opt;
  opt.directions = 0;
  GradCheckEntry e = check_scalar_function("warp", g, f, opt, 2);
  EXPECT_EQ(e.non_smooth, 2);
  EXPECT_EQ(e.probes, 6);
  EXPECT_TRUE(e.passed) << e.max_rel_error;
}

TEST(GradCheck, SuiteSelfTestDetectsInjectedFault) {
  GradCheckOptions opt;
  opt.fault_check = "warp_horizontal";
  GradCheckReport r = gradcheck_suite(ModelConfig::tiny(), opt);
  EXPECT_FALSE(r.passed());
  bool saw = false;
  for (const auto &e : r.entries)
    if (e.check == "warp_horizontal") {
      saw = true;
      EXPECT_FALSE(e.passed);
    } else {
      EXPECT_TRUE(e.passed) << e.check << "/" << e.group << " " << e.max_rel_error;
    }
  EXPECT_TRUE(saw);
  EXPECT_NE(r.to_text().find("warp_horizontal"), std::string::npos);
}
