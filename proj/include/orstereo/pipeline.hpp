#pragma once

#include <string>
#include <vector>

#include "orstereo/geometry.hpp"
#include "orstereo/network.hpp"

namespace orstereo {

enum class StopRule { Fixed, Ssim };
StopRule parse_stop_rule(const std::string &s);
const char *stop_rule_name(StopRule r);

struct InferenceConfig {
  int downsample_factor = 1;
  int patch_h = 512, patch_w = 512;
  int overlap = 32;
  int rru_iters = 10;
  StopRule stop_rule = StopRule::Fixed;
  bool nlr_per_patch = true;  // false: one refinement pass on the blended full-resolution map
  int workers = 1;
  bool keep_snapshots = false;       // blended per-iteration phase-2 disparities
  std::vector<int> patch_order;      // processing order of placements; empty = grid order

  /// Patch size 128 for the small synthetic setting.
  static InferenceConfig toy();
  void validate() const;
};

struct InferenceResult {
  DisparityMap disparity;         // full input resolution, full-resolution pixels
  OcclusionField occlusion;       // full input resolution
  DisparityMap phase1_disparity;  // upsampled phase-1 output, unmodified
  OcclusionField phase1_occlusion;
  std::vector<DisparityMap> snapshots;  // after each phase-2 iteration (when requested)
  int patch_count = 0;
  int max_iterations_run = 0;
  double phase1_seconds = 0, phase2_seconds = 0;
};

struct Phase1Result {
  DisparityMap disparity;    // full input resolution, full-resolution pixels
  OcclusionField occlusion;  // full input resolution
};

/// Mirror padding on the bottom and right edges.
Tensor<float> pad_reflect(const Tensor<float> &x, int out_h, int out_w);
int round_up32(int v);

/// Mean SSIM over channels and all valid 7x7 (or `window`) windows; c1 = 0.01^2, c2 = 0.03^2.
double ssim(const ImageField &a, const ImageField &b, int window = 7);

Phase1Result run_phase1(const ImageField &left, const ImageField &right, const InferenceConfig &cfg,
                        const StereoModel<float> &model);

struct PatchOutput {
  Tensor<float> disparity;  // 1 x h x w
  Tensor<float> occlusion;  // 2 x h x w
  std::vector<Tensor<float>> snapshots;
  int iterations = 0;
};

/// Second-phase refinement of one aligned region: FE on both crops, recurrent updates from zero
/// residual, composition with the base disparity and (optionally) local refinement.
PatchOutput refine_patch(const ImageField &left, const ImageField &warped_right, const Tensor<float> &base_disp,
                         const Tensor<float> &base_occ, const InferenceConfig &cfg, const StereoModel<float> &model,
                         bool apply_nlr);

InferenceResult run_phase2(const ImageField &left, const ImageField &right, const DisparityMap &base_disp,
                           const OcclusionField &base_occ, const InferenceConfig &cfg,
                           const StereoModel<float> &model);

InferenceResult infer(const ImageField &left, const ImageField &right, const InferenceConfig &cfg,
                      const StereoModel<float> &model);

}  // namespace orstereo
