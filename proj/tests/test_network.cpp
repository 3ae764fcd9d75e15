#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "orstereo/checkpoint.hpp"
#include "orstereo/network.hpp"
#include "orstereo/ops.hpp"
#include "test_util.hpp"

using namespace orstereo;

TEST(FeatureExtractor, PyramidShapesAndDeterminism) {
  StereoModel<float> m(ModelConfig::tiny(), 1);
  Var<float> img(testutil::random_image(64, 64, 3));
  FeaturePyramid<float> a = m.extract_features(img), b = m.extract_features(Var<float>(img.value()));
  ASSERT_EQ(a.levels.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(a.levels[k].value().height(), 64 >> (k + 1));
    EXPECT_EQ(a.levels[k].value().width(), 64 >> (k + 1));
    EXPECT_EQ(a.levels[k].value().channels(), m.config().fe_channels[static_cast<std::size_t>(k)]);
    EXPECT_EQ(a.levels[k].value(), b.levels[k].value());
  }
  EXPECT_THROW(m.extract_features(Var<float>(testutil::random_image(48, 64, 3))), ShapeError);
}

TEST(BaseDisparity, SoftArgminExamples) {
  Tensor<float> cost(8, 1, 1, 10.0f);
  cost(5, 0, 0) = -10.0f;
  EXPECT_NEAR(ops::soft_argmin(Var<float>(cost)).value()[0], 5.0f, 1e-3);
  Tensor<float> flat(6, 2, 3, 0.7f);
  for (float v : testutil::elements(ops::soft_argmin(Var<float>(flat)).value())) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(BaseDisparity, OutputsWithinHypothesisRange) {
  ModelConfig cfg = ModelConfig::tiny();
  StereoModel<float> m(cfg, 2);
  auto pl = m.extract_features(Var<float>(testutil::random_image(64, 128, 4)));
  auto pr = m.extract_features(Var<float>(testutil::random_image(64, 128, 5)));
  Var<float> d = m.bde_initial_disparity(pl.levels[3], pr.levels[3]);
  for (float v : d.value().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, float(cfg.hypotheses() - 1));
  }
}

TEST(ModelConfig, RejectsIndivisibleMaxDisparity) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.max_disparity = 40;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = ModelConfig::tiny();
  cfg.nlr_epsilon = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(BaseOcclusion, ShapeAndDeterminism) {
  StereoModel<float> m(ModelConfig::tiny(), 3);
  auto pl = m.extract_features(Var<float>(testutil::random_image(64, 64, 6)));
  Var<float> o1 = m.bme_initial_occlusion(pl.levels[3], pl.levels[3]);
  Var<float> o2 = m.bme_initial_occlusion(pl.levels[3], pl.levels[3]);
  EXPECT_EQ(o1.value().shape(), (Shape{2, 4, 4}));
  EXPECT_EQ(o1.value(), o2.value());
  EXPECT_THROW(m.bme_initial_occlusion(pl.levels[3], pl.levels[2]), ShapeError);
}

TEST(OcclusionUpdate, EquationExamples) {
  Tensor<float> o(2, 1, 1);
  o[0] = 0.5f;
  o[1] = 0.5f;
  Tensor<float> r(1, 1, 1, 0.3f);
  Tensor<float> out = apply_occlusion_update(Var<float>(o), Var<float>(r)).value();
  EXPECT_FLOAT_EQ(out[0], 0.2f);
  EXPECT_FLOAT_EQ(out[1], 0.8f);
  Tensor<float> same = apply_occlusion_update(Var<float>(o), Var<float>(Tensor<float>(1, 1, 1))).value();
  EXPECT_EQ(same, o);
}

TEST(OcclusionUpdate, ConservesChannelSumAndMovesGapByTwiceResidual) {
  Tensor<double> o = testutil::random_tensor<double>({2, 3, 4}, -3, 3, 8);
  Tensor<double> r = testutil::random_tensor<double>({1, 3, 4}, 0, 1, 9);
  Tensor<double> out = apply_occlusion_update(Var<double>(o), Var<double>(r)).value();
  for (std::size_t p = 0; p < 12; ++p) {
    EXPECT_NEAR(out[p] + out[12 + p], o[p] + o[12 + p], 1e-12);
    EXPECT_NEAR((out[12 + p] - out[p]) - (o[12 + p] - o[p]), 2 * r[p], 1e-12);
  }
}

TEST(DisparityUpdate, EquationExample) {
  Tensor<float> out =
      apply_disparity_update(Var<float>(Tensor<float>(1, 2, 2, 2.0f)), Var<float>(Tensor<float>(1, 2, 2, -0.5f))).value();
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 1.5f);
}

namespace {

struct RruFixture {
  StereoModel<float> model{ModelConfig::tiny(), 11};
  FeaturePyramid<float> pl, pr;
  Var<float> occ;

  RruFixture() {
    pl = model.extract_features(Var<float>(testutil::random_image(64, 64, 21)));
    pr = model.extract_features(Var<float>(testutil::random_image(64, 64, 22)));
    occ = Var<float>(testutil::random_tensor<float>({2, 4, 4}, -1, 1, 23));
  }
};

}  // namespace

TEST(RecurrentUpdate, InitialisationContract) {
  RruFixture f;
  auto init = f.model.rru_init(f.pl, f.pr, f.occ);
  EXPECT_EQ(init.d1.value().shape(), (Shape{1, 16, 16}));
  for (float v : init.d1.value().data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(init.o1.value().shape(), (Shape{2, 16, 16}));
  FeaturePyramid<float> short_pyr = f.pr;
  short_pyr.levels.pop_back();
  EXPECT_THROW(f.model.rru_init(f.pl, short_pyr, f.occ), ShapeError);
}

TEST(RecurrentUpdate, ContextImmutableAndHistoryLength) {
  RruFixture f;
  auto init = f.model.rru_init(f.pl, f.pr, f.occ);
  const Tensor<float> ctx = init.state.context.value();
  RRUState<float> state = init.state;
  Var<float> d1 = init.d1, o1 = init.o1;
  for (int i = 1; i <= 10; ++i) {
    auto step = f.model.rru_step(state, f.pl, f.pr, d1, o1, i);
    state = step.state;
    d1 = step.d1;
    o1 = step.o1;
    EXPECT_EQ(state.context.value(), ctx);
    for (float v : step.residuals.r_occ.value().data()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
  RRURun<float> run = f.model.rru_run(init.state, f.pl, f.pr, init.d1, init.o1, 7);
  EXPECT_EQ(run.history.size(), 7u);
  int calls = 0;
  RRURun<float> early = f.model.rru_run(init.state, f.pl, f.pr, init.d1, init.o1, 7,
                                        [&](int it, const Var<float> &) { return ++calls, it == 3; });
  EXPECT_EQ(early.history.size(), 3u);
}

TEST(RecurrentUpdate, SingleIterationRunEqualsStep) {
  RruFixture f;
  auto init = f.model.rru_init(f.pl, f.pr, f.occ);
  auto step = f.model.rru_step(init.state, f.pl, f.pr, init.d1, init.o1, 1);
  auto run = f.model.rru_run(init.state, f.pl, f.pr, init.d1, init.o1, 1);
  EXPECT_EQ(run.d1.value(), step.d1.value());
  EXPECT_EQ(run.o1.value(), step.o1.value());
}

TEST(RecurrentUpdate, OcclusionPathOffLeavesScoresUntouched) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.use_occlusion_path = false;
  StereoModel<float> m(cfg, 11);
  auto pl = m.extract_features(Var<float>(testutil::random_image(64, 64, 21)));
  auto pr = m.extract_features(Var<float>(testutil::random_image(64, 64, 22)));
  auto init = m.rru_init(pl, pr, Var<float>(testutil::random_tensor<float>({2, 4, 4}, -1, 1, 23)));
  auto run = m.rru_run(init.state, pl, pr, init.d1, init.o1, 5);
  EXPECT_EQ(run.o1.value(), init.o1.value());
}

TEST(RecurrentUpdate, NonFiniteInputAbortsWithIteration) {
  RruFixture f;
  auto init = f.model.rru_init(f.pl, f.pr, f.occ);
  Tensor<float> bad = init.d1.value();
  bad[3] = std::numeric_limits<float>::infinity();
  try {
    f.model.rru_step(init.state, f.pl, f.pr, Var<float>(bad), init.o1, 4);
    FAIL() << "expected NumericHealthError";
  } catch (const NumericHealthError &e) {
    EXPECT_EQ(e.iteration(), 4);
  } catch (const ValidationError &) {
    // rejected before the recurrent cell sees it
  }
}

TEST(Normalization, ThreeElementExample) {
  Tensor<double> d(1, 1, 3);
  d[0] = 100;
  d[1] = 200;
  d[2] = 300;
  Normalized<double> n = nlr_normalize(Var<double>(d), 1e-6);
  EXPECT_NEAR(n.mean.value()[0], 200.0, 1e-9);
  EXPECT_NEAR(n.stddev.value()[0], 81.6497, 1e-3);
  EXPECT_NEAR(n.dbar.value()[0], -1.2247, 1e-3);
  EXPECT_NEAR(n.dbar.value()[1], 0.0, 1e-3);
  EXPECT_NEAR(n.dbar.value()[2], 1.2247, 1e-3);
}

TEST(Normalization, ConstantAndAffineInputs) {
  Normalized<double> c = nlr_normalize(Var<double>(Tensor<double>(1, 2, 3, 7.0)), 1e-6);
  EXPECT_DOUBLE_EQ(c.mean.value()[0], 7.0);
  EXPECT_DOUBLE_EQ(c.stddev.value()[0], 0.0);
  for (double v : c.dbar.value().data()) EXPECT_DOUBLE_EQ(v, 0.0);

  Tensor<double> d = testutil::random_tensor<double>({1, 4, 5}, 0, 10, 4);
  Tensor<double> a(d.shape());
  for (std::size_t i = 0; i < d.size(); ++i) a[i] = 13.0 * d[i] + 250.0;
  Tensor<double> x = nlr_normalize(Var<double>(d), 1e-6).dbar.value();
  Tensor<double> y = nlr_normalize(Var<double>(a), 1e-6).dbar.value();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-3);
}

TEST(Denormalization, Examples) {
  Var<double> s(Tensor<double>::scalar(81.6497));
  for (double v : testutil::elements(nlr_denormalize(Var<double>(Tensor<double>(1, 2, 2)), s, 1e-6).value())) EXPECT_EQ(v, 0.0);
  for (double v : testutil::elements(nlr_denormalize(Var<double>(Tensor<double>(1, 2, 2, 1.0)), s, 1e-6).value()))
    EXPECT_NEAR(v, 81.6498, 1e-4);
  Tensor<double> r = testutil::random_tensor<double>({1, 3, 3}, -2, 2, 5);
  Tensor<double> out = nlr_denormalize(Var<double>(r), Var<double>(Tensor<double>::scalar(0.0)), 1e-6).value();
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_LE(std::abs(out[i]), 1e-6 * 2 + 1e-18);
}

namespace {

/// Zeroes the last layer of the refinement network's residual channel.
void zero_nlr_residual(ParamStore<float> &p) {
  for (const auto &name : p.names())
    if (name.rfind("nlr.out.", 0) == 0) {
      Tensor<float> &v = p.get(name).mutable_value();
      if (name == "nlr.out.w") {
        const std::size_t per_out = v.size() / static_cast<std::size_t>(v.dim(0));
        std::fill(v.data().begin(), v.data().begin() + static_cast<std::ptrdiff_t>(per_out), 0.0f);
      } else {
        v[0] = 0.0f;
      }
    }
}

}  // namespace

TEST(LocalRefinement, ZeroResidualIsIdentity) {
  StereoModel<float> m(ModelConfig::tiny(), 6);
  ASSERT_TRUE(m.params().contains("nlr.out.w"));
  zero_nlr_residual(m.params());
  Var<float> img(testutil::random_image(32, 32, 1));
  Tensor<float> d0 = testutil::random_tensor<float>({1, 32, 32}, 0, 20, 2);
  EXPECT_EQ(m.nlr_refine(img, Var<float>(d0)).value(), d0);
}

TEST(LocalRefinement, AffineEquivariance) {
  StereoModel<double> m(ModelConfig::tiny(), 7);
  Var<double> img(testutil::random_image(32, 32, 3).cast<double>());
  Tensor<double> d0 = testutil::random_tensor<double>({1, 32, 32}, 0, 4, 4);
  Tensor<double> base = m.nlr_refine(img, Var<double>(d0)).value();
  double maxd = 0;
  for (double v : d0.data()) maxd = std::max(maxd, std::abs(v));
  for (double a : {2.0, 10.0, 50.0})
    for (double b : {0.0, 300.0}) {
      Tensor<double> s(d0.shape());
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = a * d0[i] + b;
      Tensor<double> out = m.nlr_refine(img, Var<double>(s)).value();
      for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(out[i], a * base[i] + b, 1e-2 * a * maxd);
    }
}

TEST(LocalRefinement, ConstantInputMovesAtMostEps) {
  StereoModel<double> m(ModelConfig::tiny(), 8);
  Var<double> img(testutil::random_image(32, 32, 5).cast<double>());
  Tensor<double> d0(1, 32, 32, 42.0);
  Tensor<double> out = m.nlr_refine(img, Var<double>(d0)).value();
  auto [rbar, w] = m.nlr_residual(img, nlr_normalize(Var<double>(d0), m.config().nlr_epsilon).dbar);
  double rmax = 0;
  for (double v : rbar.value().data()) rmax = std::max(rmax, std::abs(v));
  for (double v : out.data()) EXPECT_LE(std::abs(v - 42.0), m.config().nlr_epsilon * rmax + 1e-12);
}

TEST(LocalRefinement, DisabledSwitchReturnsInput) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.use_nlr = false;
  StereoModel<float> m(cfg, 9);
  Tensor<float> d0 = testutil::random_tensor<float>({1, 32, 32}, 0, 20, 2);
  EXPECT_EQ(m.nlr_refine(Var<float>(testutil::random_image(32, 32, 1)), Var<float>(d0)).value(), d0);
  Phase1Output<float> out =
      m.forward_phase1(Var<float>(testutil::random_image(64, 64, 1)), Var<float>(testutil::random_image(64, 64, 2)), 2);
  EXPECT_EQ(out.disparity.value(), out.d0.value());
  EXPECT_THROW(m.nlr_refine(Var<float>(testutil::random_image(32, 32, 1)), Var<float>(Tensor<float>(1, 16, 16))),
               ShapeError);
}

TEST(ForwardPhase1, ShapesAndDeterminism) {
  StereoModel<float> m(ModelConfig::tiny(), 10);
  Var<float> l(testutil::random_image(64, 96, 1)), r(testutil::random_image(64, 96, 2));
  Phase1Output<float> a = m.forward_phase1(l, r, 3), b = m.forward_phase1(l, r, 3);
  EXPECT_EQ(a.disparity.value().shape(), (Shape{1, 64, 96}));
  EXPECT_EQ(a.occlusion.value().shape(), (Shape{2, 64, 96}));
  EXPECT_EQ(a.d4.value().shape(), (Shape{1, 4, 6}));
  EXPECT_EQ(a.occ_init.value().shape(), (Shape{2, 4, 6}));
  EXPECT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.disparity.value(), b.disparity.value());
  EXPECT_EQ(a.occlusion.value(), b.occlusion.value());
  EXPECT_THROW(m.forward_phase1(Var<float>(testutil::random_image(60, 96, 1)), Var<float>(testutil::random_image(60, 96, 2)), 1),
               ShapeError);
}

TEST(OcclusionStability, FiftyIterationsStayBoundedAndFinite) {
  RruFixture f;
  auto init = f.model.rru_init(f.pl, f.pr, f.occ);
  RRUState<float> state = init.state;
  Var<float> d1 = init.d1, o1 = init.o1;
  for (int i = 1; i <= 50; ++i) {
    auto step = f.model.rru_step(state, f.pl, f.pr, d1, o1, i);
    const Tensor<float> &before = o1.value(), &after = step.o1.value();
    const std::size_t plane = before.plane();
    for (std::size_t p = 0; p < plane; ++p) {
      ASSERT_TRUE(std::isfinite(after[p]) && std::isfinite(after[plane + p]));
      EXPECT_LT(std::abs(after[p] - before[p]), 1.0f);
      EXPECT_LT(std::abs(after[plane + p] - before[plane + p]), 1.0f);
      EXPECT_NEAR(after[p] + after[plane + p], before[p] + before[plane + p], 1e-4f);
    }
    state = step.state;
    d1 = step.d1;
    o1 = step.o1;
  }
}

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
  const std::string path = testutil::temp_path("ckpt_roundtrip.ckpt");
  ModelConfig cfg = ModelConfig::tiny();
  StereoModel<float> m(cfg, 12);
  save_checkpoint(path, cfg, m.params(), {{"step", "0"}});
  Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.at("step"), "0");
  EXPECT_EQ(ck.config.to_key_values(), cfg.to_key_values());
  StereoModel<float> m2(ck.config, ck.params);
  Var<float> l(testutil::random_image(64, 64, 3)), r(testutil::random_image(64, 64, 4));
  Phase1Output<float> a = m.forward_phase1(l, r, 2), b = m2.forward_phase1(l, r, 2);
  EXPECT_EQ(a.disparity.value(), b.disparity.value());
  EXPECT_EQ(a.occlusion.value(), b.occlusion.value());
  for (const auto &name : m.params().names()) EXPECT_EQ(m.params().get(name).value(), ck.params.get(name).value());
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const std::string path = testutil::temp_path("ckpt_bad.ckpt");
  testutil::write_text(path, "ORSTEREO-CHECKPOINT 2\nmanifest-bytes 0\n");
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  ModelConfig cfg = ModelConfig::tiny();
  StereoModel<float> m(cfg, 1);
  save_checkpoint(path, cfg, m.params());
  std::string bytes = testutil::read_text(path);
  testutil::write_text(path, bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), ValidationError);
}
