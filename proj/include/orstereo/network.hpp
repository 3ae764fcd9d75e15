#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "orstereo/ops.hpp"
#include "orstereo/params.hpp"

namespace orstereo {

struct ModelConfig {
  std::vector<int> fe_channels{16, 24, 32, 48, 64};
  int hidden_channels = 64;
  int context_channels = 32;
  int motion_channels = 32;
  int head_channels = 32;
  int corr_radius = 4;
  std::vector<int> corr_levels{1, 2, 3};
  int bde_groups = 4;
  int bde_channels = 32;
  int bde_depth = 2;
  int bme_channels = 32;
  int nlr_channels = 16;
  int max_disparity = 256;
  int rru_iters_train = 4;
  int rru_iters_infer = 10;
  bool use_occlusion_path = true;
  bool use_nlr = true;
  bool detach_between_steps = false;  // each step sees the previous disparity as a constant
  double nlr_epsilon = 1e-6;

  /// Feature level consumed by the base estimators (1/16 of the input width).
  static constexpr int kBaseLevel = 3;
  /// Feature level at which the recurrent updater runs (1/4 of the input width).
  static constexpr int kRefineLevel = 1;
  static constexpr int kLevels = 5;

  int hypotheses() const { return max_disparity / 16; }
  void validate() const;

  /// Small widths for finite-difference checks.
  static ModelConfig tiny();

  std::map<std::string, std::string> to_key_values() const;
  static ModelConfig from_key_values(const std::map<std::string, std::string> &kv);
};

template <typename T>
struct FeaturePyramid {
  std::vector<Var<T>> levels;
};

template <typename T>
struct RRUState {
  Var<T> hidden;
  Var<T> context;
};

template <typename T>
struct ResidualPair {
  Var<T> r_disp;
  Var<T> r_occ;
};

template <typename T>
struct RRUStepOutput {
  RRUState<T> state;
  Var<T> d1;
  Var<T> o1;
  ResidualPair<T> residuals;
};

template <typename T>
struct RRUSnapshot {
  Var<T> d1;
  Var<T> o1;
};

/// Returns true to halt after the given (1-based) iteration, given the current refinement-level disparity.
template <typename T>
using StopCriterion = std::function<bool(int iteration, const Var<T> &d1)>;

template <typename T>
struct RRURun {
  Var<T> d1;
  Var<T> o1;
  std::vector<RRUSnapshot<T>> history;
};

/// Every named tensor of a phase-1 forward pass.
template <typename T>
struct Phase1Output {
  Var<T> d4;          // base disparity, 1/16 width units
  Var<T> occ_init;    // base occlusion scores at 1/16
  Var<T> base_refine; // d4 resampled to the refinement level
  std::vector<RRUSnapshot<T>> history;  // residual d1 and o1 after each step
  Var<T> d1_total;    // base_refine + final residual
  Var<T> d0;          // d1_total at input resolution
  Var<T> disparity;   // after local refinement
  Var<T> occlusion;   // final o1 at input resolution
};

/// Occlusion residual update: channel 0 decreases by r_occ, channel 1 increases by r_occ.
template <typename T> Var<T> apply_occlusion_update(const Var<T> &o1, const Var<T> &r_occ);
/// Disparity residual update.
template <typename T> Var<T> apply_disparity_update(const Var<T> &d1, const Var<T> &r_disp);

template <typename T>
struct Normalized {
  Var<T> dbar;
  Var<T> mean;
  Var<T> stddev;
};

/// (d - mean) / (std + eps) with population std.
template <typename T> Normalized<T> nlr_normalize(const Var<T> &d0, T eps);
/// (std + eps) * rbar.
template <typename T> Var<T> nlr_denormalize(const Var<T> &rbar, const Var<T> &stddev, T eps);

/// Disparity-resampling that keeps values in pixels of the new grid.
template <typename T> Var<T> resize_disparity_var(const Var<T> &d, int h, int w);

template <typename T>
class StereoModel {
 public:
  StereoModel(ModelConfig cfg, std::uint64_t seed);
  StereoModel(ModelConfig cfg, ParamStore<T> params);

  const ModelConfig &config() const { return cfg_; }
  ModelConfig &config() { return cfg_; }
  ParamStore<T> &params() { return params_; }
  const ParamStore<T> &params() const { return params_; }

  FeaturePyramid<T> extract_features(const Var<T> &image) const;
  Var<T> bde_cost(const Var<T> &left4, const Var<T> &right4) const;
  Var<T> bde_initial_disparity(const Var<T> &left4, const Var<T> &right4) const;
  Var<T> bme_initial_occlusion(const Var<T> &left4, const Var<T> &warped4) const;
  FeaturePyramid<T> warp_pyramid(const FeaturePyramid<T> &right, const Var<T> &disparity) const;

  struct InitOutput {
    RRUState<T> state;
    Var<T> d1;
    Var<T> o1;
  };
  /// Occlusion may be given at any resolution; it is resampled to the refinement level.
  InitOutput rru_init(const FeaturePyramid<T> &left, const FeaturePyramid<T> &right_warped,
                      const Var<T> &occ_init) const;
  RRUStepOutput<T> rru_step(const RRUState<T> &state, const FeaturePyramid<T> &left,
                            const FeaturePyramid<T> &right_warped, const Var<T> &d1, const Var<T> &o1,
                            int iteration = 1) const;
  RRURun<T> rru_run(RRUState<T> state, const FeaturePyramid<T> &left, const FeaturePyramid<T> &right_warped,
                    Var<T> d1, Var<T> o1, int n, const StopCriterion<T> &criterion = {}) const;

  /// Raw G outputs (rbar, w) for a normalized disparity; exposed for inspection and tests.
  std::pair<Var<T>, Var<T>> nlr_residual(const Var<T> &left_image, const Var<T> &dbar) const;
  Var<T> nlr_refine(const Var<T> &left_image, const Var<T> &d0) const;

  Phase1Output<T> forward_phase1(const Var<T> &left, const Var<T> &right, int iterations) const;

 private:
  void build(std::uint64_t seed);
  Var<T> conv(const std::string &name, const Var<T> &x, int stride = 1) const;
  Var<T> res_block(const std::string &name, const Var<T> &x) const;
  Var<T> normalize_image(const Var<T> &image) const;

  ModelConfig cfg_;
  ParamStore<T> params_;
};

extern template class StereoModel<float>;
extern template class StereoModel<double>;

}  // namespace orstereo
