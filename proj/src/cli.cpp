#include "orstereo/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "orstereo/gradcheck.hpp"
#include "orstereo/trainer.hpp"

namespace orstereo {
namespace fs = std::filesystem;

namespace {

/// Runs body(i) for i in [0, n) on up to `workers` threads; the first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &body) {
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n));
  if (k <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < k; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto &t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void require_file(const std::string &path) {
  if (!fs::is_regular_file(path)) throw ValidationError("file not found: " + path);
}

Tensor<float> occlusion_to_gray(const OcclusionField &o) { return o.mask(); }

OcclusionField gray_to_occlusion(const Tensor<float> &g) {
  Tensor<float> m(Shape{1, g.height(), g.width()});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g[i] >= 0.5f ? 1.0f : 0.0f;
  return OcclusionField::from_mask(m);
}

ImageField snapshot_strip(const std::vector<DisparityMap> &snaps, double lo, double hi) {
  if (snaps.empty()) return {};
  const int h = snaps[0].height(), w = snaps[0].width();
  ImageField strip(3, h, w * static_cast<int>(snaps.size()));
  for (std::size_t k = 0; k < snaps.size(); ++k) {
    ImageField c = colorize_disparity(snaps[k], lo, hi);
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) strip(ch, y, static_cast<int>(k) * w + x) = c(ch, y, x);
  }
  return strip;
}

std::pair<double, double> value_range(const DisparityMap &d) {
  auto [lo, hi] = std::minmax_element(d.values.data().begin(), d.values.data().end());
  return {*lo, *hi};
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int workers = 1;
  int iters = 0;
  bool no_occlusion = false, no_nlr = false;
  std::string stop_rule = "fixed";
  int downsample = 1;
  int patch = 0;
  int overlap = -1;
};

void add_common(CLI::App *app, Common &c, bool inference) {
  app->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t &s) {
    c.seed = s;
    c.seed_set = true;
  }, "random seed");
  app->add_option("--out-dir", c.out_dir, "output directory");
  app->add_option("--workers", c.workers, "parallel workers")->check(CLI::PositiveNumber);
  app->add_option("--iters", c.iters, "recurrent update iterations")->check(CLI::PositiveNumber);
  app->add_flag("--no-occlusion", c.no_occlusion, "disable the occlusion path");
  app->add_flag("--no-nlr", c.no_nlr, "disable local refinement");
  if (inference) {
    app->add_option("--stop-rule", c.stop_rule, "fixed or ssim")->check(CLI::IsMember({"fixed", "ssim"}));
    app->add_option("--downsample", c.downsample, "phase-1 downsampling factor")->check(CLI::PositiveNumber);
    app->add_option("--patch", c.patch, "phase-2 patch size (multiple of 32)")->check(CLI::PositiveNumber);
    app->add_option("--overlap", c.overlap, "phase-2 patch overlap")->check(CLI::NonNegativeNumber);
  }
}

KeyValues load_config(const Common &c) { return c.config.empty() ? KeyValues{} : read_key_values(c.config); }

InferenceConfig inference_config(const Common &c, const KeyValues &kv) {
  InferenceConfig ic = InferenceConfig::toy();
  ic.downsample_factor = kv_int(kv, "infer.downsample", ic.downsample_factor);
  ic.patch_h = kv_int(kv, "infer.patch_h", kv_int(kv, "infer.patch", ic.patch_h));
  ic.patch_w = kv_int(kv, "infer.patch_w", kv_int(kv, "infer.patch", ic.patch_w));
  ic.overlap = kv_int(kv, "infer.overlap", ic.overlap);
  ic.rru_iters = kv_int(kv, "infer.iters", ic.rru_iters);
  ic.stop_rule = parse_stop_rule(kv_string(kv, "infer.stop_rule", stop_rule_name(ic.stop_rule)));
  ic.nlr_per_patch = kv_bool(kv, "infer.nlr_per_patch", ic.nlr_per_patch);
  ic.workers = kv_int(kv, "infer.workers", ic.workers);
  if (c.downsample != 1) ic.downsample_factor = c.downsample;
  if (c.patch > 0) ic.patch_h = ic.patch_w = c.patch;
  if (c.overlap >= 0) ic.overlap = c.overlap;
  if (c.iters > 0) ic.rru_iters = c.iters;
  if (c.stop_rule != "fixed") ic.stop_rule = parse_stop_rule(c.stop_rule);
  if (c.workers > 1) ic.workers = c.workers;
  ic.validate();
  return ic;
}

StereoModel<float> variant_model(const Checkpoint &ck, bool occlusion_path, bool nlr) {
  ModelConfig mc = ck.config;
  mc.use_occlusion_path = mc.use_occlusion_path && occlusion_path;
  mc.use_nlr = mc.use_nlr && nlr;
  return StereoModel<float>(mc, ck.params);
}

int cmd_datagen(const Common &c, const std::string &manifest, const std::string &split, int count,
                std::ostream &out) {
  if (c.out_dir.empty()) throw ValidationError("datagen: --out-dir is required");
  std::vector<SceneSpec> specs;
  if (!manifest.empty()) {
    require_file(manifest);
    specs = read_manifest(manifest);
  } else {
    KeyValues kv = load_config(c), scene_kv;
    for (const auto &[k, v] : kv)
      if (k.rfind("scene.", 0) == 0) scene_kv[k.substr(6)] = v;
    SceneSpec base = SceneSpec::from_key_values(scene_kv);
    int n = count > 0 ? count : kv_int(kv, "datagen.count", 8);
    Split sp = parse_split(split.empty() ? kv_string(kv, "datagen.split", "train") : split);
    specs = make_split_specs(sp, n, base);
    if (c.seed_set)
      for (std::size_t i = 0; i < specs.size(); ++i) specs[i].seed = c.seed + i;
  }
  write_dataset(c.out_dir, specs, c.workers);
  out << "wrote " << specs.size() << " scenes to " << c.out_dir << "\n";
  return 0;
}

int cmd_train(const Common &c, int steps, const std::string &train_manifest, const std::string &val_manifest,
              std::ostream &out, std::ostream &err) {
  TrainConfig tc = TrainConfig::from_key_values(load_config(c));
  if (c.seed_set) tc.seed = c.seed;
  if (!c.out_dir.empty()) tc.out_dir = c.out_dir;
  if (steps >= 0) tc.steps = steps;
  if (c.iters > 0) tc.model.rru_iters_train = c.iters;
  if (c.no_occlusion) tc.model.use_occlusion_path = false;
  if (c.no_nlr) tc.model.use_nlr = false;
  tc.validate();
  std::vector<SceneSpec> train_specs, val_specs;
  if (!train_manifest.empty()) {
    require_file(train_manifest);
    train_specs = read_manifest(train_manifest);
  } else {
    train_specs = make_split_specs(Split::Train, tc.train_scenes, tc.scene);
  }
  if (!val_manifest.empty()) {
    require_file(val_manifest);
    val_specs = read_manifest(val_manifest);
  } else {
    val_specs = make_split_specs(Split::Val, tc.val_scenes, tc.scene);
  }
  Dataset train(train_specs), val(val_specs);
  StereoModel<float> model(tc.model, tc.seed);
  const int every = std::max(tc.log_every, 1);
  TrainResult r = train_loop(model, train, &val, tc, [&](const TrainLogRow &row) {
    if (row.step % every == 0 || row.val_epe >= 0) {
      err << "step " << row.step << " loss " << row.total;
      if (row.val_epe >= 0) err << " val_epe " << row.val_epe;
      err << "\n";
    }
  });
  out << "final validation EPE " << r.final_val_epe << "\n";
  if (!tc.out_dir.empty()) out << "checkpoint " << tc.out_dir << "/model.ckpt\n";
  return 0;
}

int cmd_infer(const Common &c, const std::string &ckpt_path, const std::string &left_path,
              const std::string &right_path, const std::string &data_dir, bool color, bool snapshots, bool phase1,
              std::ostream &out) {
  if (c.out_dir.empty()) throw ValidationError("infer: --out-dir is required");
  require_file(ckpt_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  InferenceConfig ic = inference_config(c, load_config(c));
  ic.keep_snapshots = snapshots;
  StereoModel<float> model = variant_model(ck, !c.no_occlusion, !c.no_nlr);

  auto run_one = [&](const ImageField &left, const ImageField &right, const std::string &dir) {
    InferenceResult r = infer(left, right, ic, model);
    write_prediction(dir, r.disparity, r.occlusion);
    auto [lo, hi] = value_range(r.disparity);
    if (color) write_png_rgb(dir + "/disparity_color.png", colorize_disparity(r.disparity, lo, hi));
    if (snapshots && !r.snapshots.empty()) write_png_rgb(dir + "/snapshots.png", snapshot_strip(r.snapshots, lo, hi));
    if (phase1) {
      write_pfm(dir + "/phase1_disparity.pfm", r.phase1_disparity);
      write_png_gray(dir + "/phase1_occlusion.png", occlusion_to_gray(r.phase1_occlusion));
    }
    return r;
  };

  if (!data_dir.empty()) {
    std::vector<StoredScene> scenes = read_dataset(data_dir);
    for (const auto &s : scenes) run_one(s.left, s.right, c.out_dir + "/" + s.name);
    out << "inferred " << scenes.size() << " scenes into " << c.out_dir << "\n";
    return 0;
  }
  if (left_path.empty() || right_path.empty()) throw ValidationError("infer: need --left and --right, or --data");
  require_file(left_path);
  require_file(right_path);
  InferenceResult r = run_one(read_png_rgb(left_path), read_png_rgb(right_path), c.out_dir);
  out << "patches " << r.patch_count << ", phase 1 " << r.phase1_seconds << " s, phase 2 " << r.phase2_seconds
      << " s\n";
  return 0;
}

int cmd_eval(const Common &c, const std::string &pred_dir, const std::string &gt_dir, const std::string &label,
             std::ostream &out) {
  std::vector<StoredScene> scenes = read_dataset(gt_dir);
  MetricReport report;
  report.label = label;
  report.rows.resize(scenes.size());
  parallel_for(scenes.size(), c.workers, [&](std::size_t i) {
    const std::string dir = pred_dir + "/" + scenes[i].name;
    require_file(dir + "/disparity.pfm");
    require_file(dir + "/occlusion.png");
    DisparityMap pd = read_pfm(dir + "/disparity.pfm");
    OcclusionField po = gray_to_occlusion(read_png_gray(dir + "/occlusion.png"));
    report.rows[i] = evaluate_scene(scenes[i].name, pd, po, scenes[i].disparity, scenes[i].occlusion);
  });
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    std::ofstream(c.out_dir + "/report.csv") << report.to_csv();
    std::ofstream(c.out_dir + "/report.txt") << report.to_table();
  }
  out << report.to_table();
  return 0;
}

int cmd_ablate(const Common &c, const std::string &ckpt_path, const std::string &data_dir,
               const std::vector<std::string> &only, std::ostream &out, std::ostream &err) {
  require_file(ckpt_path);
  Checkpoint ck = load_checkpoint(ckpt_path);
  InferenceConfig ic = inference_config(c, load_config(c));
  ic.workers = 1;
  std::vector<StoredScene> scenes = read_dataset(data_dir);
  std::vector<AblationVariant> grid;
  for (const auto &v : ablation_grid())
    if (only.empty() || std::find(only.begin(), only.end(), v.name) != only.end()) grid.push_back(v);
  if (grid.empty()) throw ValidationError("ablate: --variants matched no grid entry");
  MetricReport summary;
  summary.label = "ablation summary (mean over scenes)";
  for (const auto &v : grid) {
    MetricReport r = evaluate_variant(ck, scenes, v, ic, c.workers);
    MetricRow m = r.aggregate();
    m.scene = v.name;
    summary.rows.push_back(m);
    err << v.name << ": epe_nonoccluded " << m.epe_nonoccluded << "\n";
    if (!c.out_dir.empty()) {
      fs::create_directories(c.out_dir);
      std::ofstream(c.out_dir + "/" + v.name + ".csv") << r.to_csv();
    }
  }
  if (!c.out_dir.empty()) std::ofstream(c.out_dir + "/summary.txt") << summary.to_table();
  out << summary.to_table();
  return 0;
}

int cmd_gradcheck(const Common &c, std::ostream &out) {
  KeyValues kv = load_config(c);
  ModelConfig mc = kv.empty() ? ModelConfig::tiny() : ModelConfig::from_key_values(kv);
  GradCheckOptions opt;
  if (c.seed_set) opt.seed = c.seed;
  GradCheckReport r = gradcheck_suite(mc, opt);
  out << r.to_text();
  return r.passed() ? 0 : 1;
}

}  // namespace

std::string scene_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", index);
  return buf;
}

void write_dataset(const std::string &dir, const std::vector<SceneSpec> &specs, int workers) {
  fs::create_directories(dir);
  write_manifest(dir + "/manifest.txt", specs);
  parallel_for(specs.size(), workers, [&](std::size_t i) {
    const std::string sd = dir + "/" + scene_name(i);
    fs::create_directories(sd);
    TrainSample s = generate_scene(specs[i]);
    write_png_rgb(sd + "/left.png", s.left);
    write_png_rgb(sd + "/right.png", s.right);
    write_pfm(sd + "/disp_left.pfm", s.disp_left);
    write_pfm(sd + "/disp_right.pfm", s.disp_right);
    write_png_gray(sd + "/occlusion.png", occlusion_to_gray(s.occlusion));
  });
}

std::vector<StoredScene> read_dataset(const std::string &dir) {
  const std::string manifest = dir + "/manifest.txt";
  require_file(manifest);
  const std::size_t n = read_manifest(manifest).size();
  std::vector<StoredScene> scenes(n);
  for (std::size_t i = 0; i < n; ++i) {
    StoredScene &s = scenes[i];
    s.name = scene_name(i);
    const std::string sd = dir + "/" + s.name;
    for (const char *f : {"/left.png", "/right.png", "/disp_left.pfm", "/occlusion.png"}) require_file(sd + f);
    s.left = read_png_rgb(sd + "/left.png");
    s.right = read_png_rgb(sd + "/right.png");
    s.disparity = read_pfm(sd + "/disp_left.pfm");
    s.occlusion = gray_to_occlusion(read_png_gray(sd + "/occlusion.png"));
  }
  return scenes;
}

void write_prediction(const std::string &dir, const DisparityMap &disp, const OcclusionField &occ) {
  fs::create_directories(dir);
  write_pfm(dir + "/disparity.pfm", disp);
  write_png_gray(dir + "/occlusion.png", occlusion_to_gray(occ));
}

std::string variant_name(const AblationVariant &v) {
  return "it" + std::to_string(v.iterations) + (v.occlusion_path ? "_occ" : "_noocc") + (v.nlr ? "_nlr" : "_nonlr") +
         "_" + stop_rule_name(v.stop_rule);
}

std::vector<AblationVariant> ablation_grid() {
  std::vector<AblationVariant> g;
  for (int it : {1, 4, 10, 15, 20})
    for (bool occ : {true, false})
      for (bool nlr : {true, false})
        for (StopRule s : {StopRule::Fixed, StopRule::Ssim}) {
          AblationVariant v{"", it, occ, nlr, s};
          v.name = variant_name(v);
          g.push_back(v);
        }
  return g;
}

MetricReport evaluate_variant(const Checkpoint &ckpt, const std::vector<StoredScene> &scenes,
                              const AblationVariant &variant, const InferenceConfig &base, int workers) {
  StereoModel<float> model = variant_model(ckpt, variant.occlusion_path, variant.nlr);
  InferenceConfig ic = base;
  ic.rru_iters = variant.iterations;
  ic.stop_rule = variant.stop_rule;
  ic.keep_snapshots = false;
  ic.workers = 1;
  MetricReport report;
  report.label = variant.name;
  report.rows.resize(scenes.size());
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    InferenceResult r = infer(scenes[i].left, scenes[i].right, ic, model);
    report.rows[i] = evaluate_scene(scenes[i].name, r.disparity, r.occlusion, scenes[i].disparity, scenes[i].occlusion);
  });
  return report;
}

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Occlusion-aware recurrent stereo matching: data generation, training, inference, evaluation"};
  app.require_subcommand(1, 1);
  Common c;

  std::string manifest, split;
  int count = 0;
  auto *datagen = app.add_subcommand("datagen", "render a synthetic dataset from a manifest or a split");
  add_common(datagen, c, false);
  datagen->add_option("--manifest", manifest, "scene manifest (one spec per line)");
  datagen->add_option("--split", split, "train, val or test (when no manifest is given)");
  datagen->add_option("--count", count, "number of scenes (when no manifest is given)");

  int steps = -1;
  std::string train_manifest, val_manifest;
  auto *train = app.add_subcommand("train", "train a model; writes model.ckpt and metrics.csv");
  add_common(train, c, false);
  train->add_option("--steps", steps, "optimizer steps");
  train->add_option("--train-manifest", train_manifest, "training scene manifest");
  train->add_option("--val-manifest", val_manifest, "validation scene manifest");

  std::string ckpt, left, right, data;
  bool color = false, snapshots = false, phase1 = false;
  auto *inf = app.add_subcommand("infer", "two-phase inference on a stereo pair or a dataset directory");
  add_common(inf, c, true);
  inf->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  inf->add_option("--left", left, "left image (PNG)");
  inf->add_option("--right", right, "right image (PNG)");
  inf->add_option("--data", data, "dataset directory (instead of --left/--right)");
  inf->add_flag("--color", color, "also write a colormapped disparity PNG");
  inf->add_flag("--snapshots", snapshots, "also write the per-iteration snapshot strip");
  inf->add_flag("--phase1", phase1, "also write the upsampled phase-1 output");

  std::string pred, gt, label;
  auto *ev = app.add_subcommand("eval", "score predictions against a dataset directory");
  add_common(ev, c, false);
  ev->add_option("--pred", pred, "prediction directory")->required();
  ev->add_option("--gt", gt, "dataset directory")->required();
  ev->add_option("--label", label, "report label");

  std::vector<std::string> only;
  auto *abl = app.add_subcommand("ablate", "run the ablation grid on a dataset directory");
  add_common(abl, c, true);
  abl->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  abl->add_option("--data", data, "dataset directory")->required();
  abl->add_option("--variants", only, "restrict to these variant names")->delimiter(',');

  auto *gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*datagen) return cmd_datagen(c, manifest, split, count, out);
    if (*train) return cmd_train(c, steps, train_manifest, val_manifest, out, err);
    if (*inf) return cmd_infer(c, ckpt, left, right, data, color, snapshots, phase1, out);
    if (*ev) return cmd_eval(c, pred, gt, label, out);
    if (*abl) return cmd_ablate(c, ckpt, data, only, out, err);
    if (*gc) return cmd_gradcheck(c, out);
  } catch (const NumericHealthError &e) {
    err << "numeric health abort";
    if (e.iteration() >= 0) err << " at iteration " << e.iteration();
    err << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace orstereo
