#include "orstereo/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace orstereo {
namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

StopRule parse_stop_rule(const std::string &s) {
  if (s == "fixed") return StopRule::Fixed;
  if (s == "ssim") return StopRule::Ssim;
  throw ValidationError("unknown stop rule '" + s + "' (expected fixed or ssim)");
}

const char *stop_rule_name(StopRule r) { return r == StopRule::Fixed ? "fixed" : "ssim"; }

InferenceConfig InferenceConfig::toy() {
  InferenceConfig c;
  c.patch_h = c.patch_w = 128;
  return c;
}

void InferenceConfig::validate() const {
  if (downsample_factor < 1) throw ValidationError("inference: downsample factor must be >= 1");
  if (patch_h < 32 || patch_w < 32 || patch_h % 32 || patch_w % 32)
    throw ValidationError("inference: patch dimensions must be positive multiples of 32, got " +
                          std::to_string(patch_h) + "x" + std::to_string(patch_w));
  if (overlap < 0 || overlap >= std::min(patch_h, patch_w))
    throw ValidationError("inference: overlap must be in [0, patch)");
  if (rru_iters < 1) throw ValidationError("inference: iteration count must be >= 1");
  if (workers < 1) throw ValidationError("inference: workers must be >= 1");
}

int round_up32(int v) { return (v + 31) / 32 * 32; }

Tensor<float> pad_reflect(const Tensor<float> &x, int out_h, int out_w) {
  require_rank3(x, "pad_reflect");
  const int c = x.channels(), h = x.height(), w = x.width();
  if (out_h < h || out_w < w) throw ShapeError("pad_reflect: target smaller than input");
  if (out_h == h && out_w == w) return x;
  Tensor<float> out(c, out_h, out_w);
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) out(k, y, xx) = x(k, mirror(y, h), mirror(xx, w));
  return out;
}

double ssim(const ImageField &a, const ImageField &b, int window) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
  require_rank3(a, "ssim");
  const int c = a.channels(), h = a.height(), w = a.width();
  const int wy = std::min(window, h), wx = std::min(window, w);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int ny = h - wy + 1, nx = w - wx + 1;
  // Integral images of x, y, x^2, y^2, xy.
  std::vector<double> I(static_cast<std::size_t>(5) * (h + 1) * (w + 1));
  auto at = [&](int s, int y, int x) -> double & {
    return I[(static_cast<std::size_t>(s) * (h + 1) + y) * (w + 1) + x];
  };
  double total = 0;
  for (int k = 0; k < c; ++k) {
    std::fill(I.begin(), I.end(), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double p = a(k, y, x), q = b(k, y, x);
        double v[5] = {p, q, p * p, q * q, p * q};
        for (int s = 0; s < 5; ++s) at(s, y + 1, x + 1) = v[s] + at(s, y, x + 1) + at(s, y + 1, x) - at(s, y, x);
      }
    const double n = double(wy) * wx;
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        double m[5];
        for (int s = 0; s < 5; ++s)
          m[s] = (at(s, y + wy, x + wx) - at(s, y, x + wx) - at(s, y + wy, x) + at(s, y, x)) / n;
        double vx = m[2] - m[0] * m[0], vy = m[3] - m[1] * m[1], cxy = m[4] - m[0] * m[1];
        total += ((2 * m[0] * m[1] + c1) * (2 * cxy + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
      }
  }
  return total / (double(c) * ny * nx);
}

Phase1Result run_phase1(const ImageField &left, const ImageField &right, const InferenceConfig &cfg,
                        const StereoModel<float> &model) {
  cfg.validate();
  if (left.shape() != right.shape())
    throw ShapeError("run_phase1: left " + shape_str(left.shape()) + " vs right " + shape_str(right.shape()));
  if (left.channels() != 3) throw ShapeError("run_phase1: expected 3-channel images");
  const int H = left.height(), W = left.width();
  const int h = static_cast<int>(std::lround(double(H) / cfg.downsample_factor));
  const int w = static_cast<int>(std::lround(double(W) / cfg.downsample_factor));
  if (h < 32 || w < 32)
    throw ValidationError("run_phase1: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " is smaller than 32x32 after downsampling by " + std::to_string(cfg.downsample_factor));
  NoGradGuard guard;
  const int ph = round_up32(h), pw = round_up32(w);
  ImageField l = pad_reflect(resize_field(left, h, w), ph, pw);
  ImageField r = pad_reflect(resize_field(right, h, w), ph, pw);
  Phase1Output<float> out = model.forward_phase1(Var<float>(l), Var<float>(r), cfg.rru_iters);
  DisparityMap d(crop(out.disparity.value(), 0, 0, h, w), 0);
  OcclusionField o(crop(out.occlusion.value(), 0, 0, h, w), 0);
  return {resize_disparity(d, H, W), resize_field(o, H, W)};
}

PatchOutput refine_patch(const ImageField &left, const ImageField &warped_right, const Tensor<float> &base_disp,
                         const Tensor<float> &base_occ, const InferenceConfig &cfg, const StereoModel<float> &model,
                         bool apply_nlr) {
  NoGradGuard guard;
  const int h = left.height(), w = left.width();
  Var<float> L(left), R(warped_right), D(base_disp);
  FeaturePyramid<float> pl = model.extract_features(L);
  FeaturePyramid<float> pr = model.extract_features(R);
  auto init = model.rru_init(pl, pr, Var<float>(base_occ));

  StopCriterion<float> stop;
  double previous = 0;
  if (cfg.stop_rule == StopRule::Ssim) {
    previous = ssim(left, warped_right);
    stop = [&](int, const Var<float> &d1) {
      Var<float> residual = resize_disparity_var(d1, h, w);
      double now = ssim(left, ops::warp_horizontal(R, residual).value());
      bool worse = now < previous;
      previous = now;
      return worse;
    };
  }
  RRURun<float> run = model.rru_run(init.state, pl, pr, init.d1, init.o1, cfg.rru_iters, stop);
  PatchOutput out;
  out.iterations = static_cast<int>(run.history.size());
  if (cfg.keep_snapshots)
    for (const auto &s : run.history) out.snapshots.push_back(ops::add(D, resize_disparity_var(s.d1, h, w)).value());
  Var<float> disp = ops::add(D, resize_disparity_var(run.d1, h, w));
  if (apply_nlr) disp = model.nlr_refine(L, disp);
  out.disparity = disp.value();
  out.occlusion = ops::resize_bilinear(run.o1, h, w).value();
  return out;
}

InferenceResult run_phase2(const ImageField &left, const ImageField &right, const DisparityMap &base_disp,
                           const OcclusionField &base_occ, const InferenceConfig &cfg,
                           const StereoModel<float> &model) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (left.shape() != right.shape()) throw ShapeError("run_phase2: left/right shape mismatch");
  require_same_hw(left, base_disp.values, "run_phase2");
  require_same_hw(left, base_occ.scores, "run_phase2");
  const int H = left.height(), W = left.width();
  const int PH = round_up32(H), PW = round_up32(W);
  ImageField warped = warp_horizontal(right, base_disp).warped;
  ImageField l = pad_reflect(left, PH, PW), r = pad_reflect(warped, PH, PW);
  Tensor<float> d = pad_reflect(base_disp.values, PH, PW), o = pad_reflect(base_occ.scores, PH, PW);

  const int patch_h = std::min(cfg.patch_h, PH), patch_w = std::min(cfg.patch_w, PW);
  const int overlap = std::min(cfg.overlap, std::min(patch_h, patch_w) - 1);
  PatchGrid grid;
  try {
    grid = make_patch_grid(PH, PW, patch_h, patch_w, overlap);
  } catch (const std::exception &e) {
    throw ValidationError("run_phase2: cannot tile " + std::to_string(H) + "x" + std::to_string(W) + " with " +
                          std::to_string(cfg.patch_h) + "x" + std::to_string(cfg.patch_w) + " patches: " + e.what());
  }
  const std::size_t n = grid.placements.size();
  std::vector<std::size_t> order(n);
  if (cfg.patch_order.empty()) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
  } else {
    if (cfg.patch_order.size() != n) throw ValidationError("run_phase2: patch_order must list every placement");
    std::vector<bool> seen(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      auto k = static_cast<std::size_t>(cfg.patch_order[i]);
      if (cfg.patch_order[i] < 0 || k >= n || seen[k]) throw ValidationError("run_phase2: bad patch_order");
      seen[k] = true;
      order[i] = k;
    }
  }

  std::vector<PatchOutput> results(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        const auto [r0, c0] = grid.placements[order[i]];
        results[order[i]] = refine_patch(crop(l, r0, c0, patch_h, patch_w), crop(r, r0, c0, patch_h, patch_w),
                                         crop(d, r0, c0, patch_h, patch_w), crop(o, r0, c0, patch_h, patch_w), cfg,
                                         model, cfg.nlr_per_patch);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const int threads = std::min<int>(cfg.workers, static_cast<int>(n));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<ImageField> disp_patches, occ_patches;
  InferenceResult res;
  for (auto &p : results) {
    disp_patches.push_back(p.disparity);
    occ_patches.push_back(p.occlusion);
    res.max_iterations_run = std::max(res.max_iterations_run, p.iterations);
  }
  ImageField disp = blend_patches(grid, disp_patches);
  if (!cfg.nlr_per_patch && model.config().use_nlr) {
    NoGradGuard guard;
    disp = model.nlr_refine(Var<float>(l), Var<float>(disp)).value();
  }
  ImageField occ = blend_patches(grid, occ_patches);
  if (cfg.keep_snapshots) {
    for (int it = 0; it < res.max_iterations_run; ++it) {
      std::vector<ImageField> snaps;
      for (auto &p : results) snaps.push_back(p.snapshots[std::min<std::size_t>(it, p.snapshots.size() - 1)]);
      res.snapshots.emplace_back(crop(blend_patches(grid, snaps), 0, 0, H, W), 0);
    }
  }
  res.disparity = DisparityMap(crop(disp, 0, 0, H, W), 0);
  res.occlusion = OcclusionField(crop(occ, 0, 0, H, W), 0);
  res.phase1_disparity = base_disp;
  res.phase1_occlusion = base_occ;
  res.patch_count = static_cast<int>(n);
  res.phase2_seconds = seconds_since(t0);
  return res;
}

InferenceResult infer(const ImageField &left, const ImageField &right, const InferenceConfig &cfg,
                      const StereoModel<float> &model) {
  const auto t0 = std::chrono::steady_clock::now();
  Phase1Result p1 = run_phase1(left, right, cfg, model);
  double t1 = seconds_since(t0);
  InferenceResult res = run_phase2(left, right, p1.disparity, p1.occlusion, cfg, model);
  res.phase1_seconds = t1;
  return res;
}

}  // namespace orstereo
