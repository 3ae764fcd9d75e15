#pragma once

#include <array>
#include <string>
#include <vector>

#include "orstereo/geometry.hpp"
#include "orstereo/network.hpp"

namespace orstereo {

struct LossWeights {
  double lam_d4 = 32;
  double lam_o = 2;
  double lam_d1 = 2;
  double lam_o1 = 1;
  double lam_d = 2;
  double gamma_d = 0.8;
  double gamma_o = 0.8;

  void validate() const;
};

/// Names of the five weighted groups, in breakdown order.
inline const std::array<std::string, 5> &loss_term_names() {
  static const std::array<std::string, 5> names{"base_disparity", "base_occlusion", "refine_disparity",
                                                "refine_occlusion", "final_disparity"};
  return names;
}

template <typename T>
struct LossResult {
  Var<T> total;
  std::array<double, 5> terms{};  // weighted contribution of each group
};

/// Ground truth resampled to every supervised resolution.
template <typename T>
struct LossTargets {
  Tensor<T> disparity;     // 1 x H x W
  Tensor<T> disparity_base;  // at the base-estimator level, in its pixel units
  Tensor<T> disparity_refine;  // at the refinement level, in its pixel units (absolute, not residual)
  Tensor<T> occ_base;      // 2-channel probabilities at the base-estimator level
  Tensor<T> occ_refine;    // 2-channel probabilities at the refinement level
};

/// `occ_labels` is a 2-channel one-hot field at input resolution.
template <typename T>
LossTargets<T> make_loss_targets(const Tensor<T> &disparity, const Tensor<T> &occ_labels);

/// Iteration weight gamma^(n - i + 1) for 1-based iteration i of n.
double iteration_weight(double gamma, int i, int n);

/// Weighted sum of already-evaluated groups. `refine_disp` and `refine_occ` hold one entry per iteration.
template <typename T>
LossResult<T> combine_loss_terms(const Var<T> &base_disp, const Var<T> &base_occ, const std::vector<Var<T>> &refine_disp,
                                 const std::vector<Var<T>> &refine_occ, const Var<T> &final_disp,
                                 const LossWeights &w);

/// Full training objective for a phase-1 forward pass with `n` recurrent iterations. Refinement-level
/// residuals are supervised against ground truth minus the resampled base disparity.
template <typename T>
LossResult<T> total_loss(const Phase1Output<T> &out, const LossTargets<T> &targets, const LossWeights &w, int n);

/// Mean smooth-L1 (transition at 1) of pred - target over `mask` (or all pixels).
double smooth_l1(const DisparityMap &pred, const DisparityMap &target, const ValidityMask *mask = nullptr);
/// Mean per-pixel two-class softmax cross-entropy against hard labels.
double cross_entropy_occ(const OcclusionField &scores, const OcclusionField &labels);

}  // namespace orstereo
