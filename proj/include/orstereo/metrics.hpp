#pragma once

#include <string>
#include <vector>

#include "orstereo/geometry.hpp"

namespace orstereo {

/// Mean |pred - gt| over pixels where mask != 0 (all pixels without a mask).
double epe(const DisparityMap &pred, const DisparityMap &gt, const Tensor<float> *mask = nullptr);

/// Fraction of masked pixels with |pred - gt| > threshold.
double bad_pixel_rate(const DisparityMap &pred, const DisparityMap &gt, double threshold,
                      const Tensor<float> *mask = nullptr);

struct OcclusionScores {
  double precision = 0, recall = 0, f1 = 0;
  bool empty = false;  // no predicted or no true positives; affected scores are reported as 0
};

/// Binary scores with "occluded" as the positive class.
OcclusionScores occlusion_metrics(const OcclusionField &pred, const OcclusionField &gt);

struct MetricRow {
  std::string scene;
  double epe_all = 0, epe_nonoccluded = 0;
  double bad_1 = 0, bad_3 = 0;  // over non-occluded pixels
  double occ_precision = 0, occ_recall = 0, occ_f1 = 0;
  bool occ_empty = false;
  double gt_min = 0, gt_max = 0;  // colormap range used for renders of this scene
};

MetricRow evaluate_scene(const std::string &scene, const DisparityMap &pred_disp, const OcclusionField &pred_occ,
                         const DisparityMap &gt_disp, const OcclusionField &gt_occ);

struct MetricReport {
  std::string label;
  std::vector<MetricRow> rows;

  /// Mean of every column over the scene rows.
  MetricRow aggregate() const;
  /// One line per scene plus a final "mean" row; the first line documents the render colormap.
  std::string to_csv() const;
  std::string to_table() const;
};

/// Perceptually uniform (viridis) ramp over [lo, hi]; values outside are clamped.
ImageField colorize_disparity(const DisparityMap &d, double lo, double hi);

}  // namespace orstereo
