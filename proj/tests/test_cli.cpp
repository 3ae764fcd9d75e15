#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "orstereo/cli.hpp"
#include "test_util.hpp"

using namespace orstereo;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "orstereo");
  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string fresh_dir(const std::string &name) {
  std::string d = testutil::temp_path(name);
  fs::remove_all(d);
  return d;
}

std::string small_dataset(const std::string &name, int count) {
  std::string dir = fresh_dir(name);
  SceneSpec base;
  base.image_h = 64;
  base.image_w = 96;
  base.d_max = 12;
  write_dataset(dir, make_split_specs(Split::Test, count, base));
  return dir;
}

}  // namespace

TEST(Cli, DatagenWritesLayout) {
  std::string dir = fresh_dir("cli_datagen");
  std::string cfg = testutil::temp_path("cli_datagen.cfg");
  testutil::write_text(cfg, "scene.h=32\nscene.w=64\nscene.dmax=10\n");
  CliRun r = cli({"datagen", "--split", "val", "--count", "2", "--config", cfg, "--out-dir", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char *f : {"manifest.txt", "scene_0000/left.png", "scene_0001/disp_left.pfm", "scene_0001/occlusion.png"})
    EXPECT_TRUE(fs::exists(dir + "/" + f)) << f;
  std::vector<StoredScene> scenes = read_dataset(dir);
  ASSERT_EQ(scenes.size(), 2u);
  EXPECT_EQ(scenes[0].left.shape(), (Shape{3, 32, 64}));
  SceneSpec s = read_manifest(dir + "/manifest.txt")[1];
  s.image_h = 32;
  EXPECT_EQ(scenes[1].disparity.values, generate_scene(s).disp_left.values);
}

TEST(Cli, EvalOfGroundTruthIsPerfect) {
  std::string gt = small_dataset("cli_gt", 2);
  std::string pred = fresh_dir("cli_pred_gt");
  for (const auto &s : read_dataset(gt)) write_prediction(pred + "/" + s.name, s.disparity, s.occlusion);
  std::string out = fresh_dir("cli_eval");
  CliRun r = cli({"eval", "--pred", pred, "--gt", gt, "--out-dir", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::string csv = testutil::read_text(out + "/report.csv");
  EXPECT_NE(csv.find("\nmean,0.000000,0.000000,0.000000,0.000000,1.000000,1.000000,1.000000,0,"), std::string::npos) << csv;
  EXPECT_TRUE(fs::exists(out + "/report.txt"));
  EXPECT_NE(r.out.find("mean"), std::string::npos);
}

TEST(Cli, InferThenEvalRoundTripsThroughPfm) {
  std::string gt = small_dataset("cli_gt_infer", 1);
  std::string ckpt = testutil::temp_path("cli_model.ckpt");
  ModelConfig mc = ModelConfig::tiny();
  StereoModel<float> model(mc, 3);
  save_checkpoint(ckpt, mc, model.params());
  std::string pred = fresh_dir("cli_pred");
  CliRun r = cli({"infer", "--checkpoint", ckpt, "--data", gt, "--out-dir", pred, "--iters", "2", "--patch", "64",
               "--overlap", "16"});
  ASSERT_EQ(r.code, 0) << r.err;

  StoredScene s = read_dataset(gt)[0];
  InferenceConfig ic = InferenceConfig::toy();
  ic.rru_iters = 2;
  ic.patch_h = ic.patch_w = 64;
  ic.overlap = 16;
  InferenceResult direct = infer(s.left, s.right, ic, model);
  EXPECT_EQ(read_pfm(pred + "/scene_0000/disparity.pfm").values, direct.disparity.values);

  CliRun e = cli({"eval", "--pred", pred, "--gt", gt});
  ASSERT_EQ(e.code, 0) << e.err;

  std::string single = fresh_dir("cli_single");
  CliRun one = cli({"infer", "--checkpoint", ckpt, "--left", gt + "/scene_0000/left.png", "--right",
                 gt + "/scene_0000/right.png", "--out-dir", single, "--iters", "2", "--patch", "64", "--overlap",
                 "16", "--color", "--snapshots", "--phase1"});
  ASSERT_EQ(one.code, 0) << one.err;
  for (const char *f : {"disparity.pfm", "occlusion.png", "disparity_color.png", "snapshots.png", "phase1_disparity.pfm"})
    EXPECT_TRUE(fs::exists(single + "/" + f)) << f;
  EXPECT_EQ(read_png_rgb(single + "/snapshots.png").width(), 2 * 96);
}

TEST(Cli, ErrorsNameTheFlagOrPath) {
  CliRun bad = cli({"eval", "--pred", "a", "--gt", "b", "--bogus-flag"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("--bogus-flag"), std::string::npos) << bad.err;

  std::string missing = testutil::temp_path("no_such_dir");
  CliRun nf = cli({"eval", "--pred", missing, "--gt", missing});
  EXPECT_EQ(nf.code, 1);
  EXPECT_NE(nf.err.find(missing), std::string::npos) << nf.err;

  CliRun ck = cli({"infer", "--checkpoint", missing + "/m.ckpt", "--data", missing, "--out-dir", missing});
  EXPECT_EQ(ck.code, 1);
  EXPECT_NE(ck.err.find("m.ckpt"), std::string::npos) << ck.err;

  CliRun cfg = cli({"gradcheck", "--config", missing + "/x.cfg"});
  EXPECT_EQ(cfg.code, 1);
  EXPECT_NE(cfg.err.find("x.cfg"), std::string::npos) << cfg.err;

  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, AblationGridCoversEveryCombination) {
  std::vector<AblationVariant> g = ablation_grid();
  EXPECT_EQ(g.size(), 40u);
  std::set<std::string> names;
  for (const auto &v : g) names.insert(v.name);
  EXPECT_EQ(names.size(), 40u);
  EXPECT_TRUE(names.count("it10_occ_nlr_fixed"));
  EXPECT_TRUE(names.count("it1_noocc_nonlr_ssim"));
}

TEST(Cli, AblateWritesOneReportPerVariant) {
  std::string gt = small_dataset("cli_gt_ablate", 1);
  std::string ckpt = testutil::temp_path("cli_ablate.ckpt");
  ModelConfig mc = ModelConfig::tiny();
  save_checkpoint(ckpt, mc, StereoModel<float>(mc, 4).params());
  std::string out = fresh_dir("cli_ablate");
  CliRun r = cli({"ablate", "--checkpoint", ckpt, "--data", gt, "--out-dir", out, "--patch", "64", "--overlap", "16",
               "--variants", "it1_occ_nlr_fixed,it1_noocc_nlr_fixed"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out + "/it1_occ_nlr_fixed.csv"));
  EXPECT_TRUE(fs::exists(out + "/it1_noocc_nlr_fixed.csv"));
  EXPECT_NE(testutil::read_text(out + "/summary.txt").find("it1_noocc_nlr_fixed"), std::string::npos);
  EXPECT_EQ(cli({"ablate", "--checkpoint", ckpt, "--data", gt, "--variants", "nope"}).code, 1);
}
