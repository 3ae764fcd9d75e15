#include "orstereo/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace orstereo {
namespace {

void check_pair(const DisparityMap &a, const DisparityMap &b, const Tensor<float> *mask, const char *what) {
  if (a.values.shape() != b.values.shape())
    throw ShapeError(std::string(what) + ": " + shape_str(a.values.shape()) + " vs " + shape_str(b.values.shape()));
  if (mask && mask->size() != a.values.size()) throw ShapeError(std::string(what) + ": mask shape mismatch");
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

constexpr std::array<std::array<double, 3>, 9> kViridis{{{0.267004, 0.004874, 0.329415},
                                                         {0.282623, 0.140926, 0.457517},
                                                         {0.253935, 0.265254, 0.529983},
                                                         {0.206756, 0.371758, 0.553117},
                                                         {0.163625, 0.471133, 0.558148},
                                                         {0.127568, 0.566949, 0.550556},
                                                         {0.134692, 0.658636, 0.517649},
                                                         {0.266941, 0.748751, 0.440573},
                                                         {0.993248, 0.906157, 0.143936}}};

}  // namespace

double epe(const DisparityMap &pred, const DisparityMap &gt, const Tensor<float> *mask) {
  check_pair(pred, gt, mask, "epe");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (mask && (*mask)[i] == 0.0f) continue;
    sum += std::abs(double(pred.values[i]) - double(gt.values[i]));
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

double bad_pixel_rate(const DisparityMap &pred, const DisparityMap &gt, double threshold, const Tensor<float> *mask) {
  check_pair(pred, gt, mask, "bad_pixel_rate");
  std::size_t bad = 0, n = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (mask && (*mask)[i] == 0.0f) continue;
    bad += std::abs(double(pred.values[i]) - double(gt.values[i])) > threshold;
    ++n;
  }
  return n ? static_cast<double>(bad) / static_cast<double>(n) : 0.0;
}

OcclusionScores occlusion_metrics(const OcclusionField &pred, const OcclusionField &gt) {
  if (pred.scores.shape() != gt.scores.shape()) throw ShapeError("occlusion_metrics: shape mismatch");
  Tensor<float> p = pred.mask(), g = gt.mask();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bool pp = p[i] != 0.0f, gg = g[i] != 0.0f;
    tp += pp && gg;
    fp += pp && !gg;
    fn += !pp && gg;
  }
  OcclusionScores s;
  s.empty = (tp + fp == 0) || (tp + fn == 0);
  s.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  s.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

MetricRow evaluate_scene(const std::string &scene, const DisparityMap &pred_disp, const OcclusionField &pred_occ,
                         const DisparityMap &gt_disp, const OcclusionField &gt_occ) {
  MetricRow r;
  r.scene = scene;
  Tensor<float> visible = gt_occ.mask();
  for (float &v : visible.data()) v = v != 0.0f ? 0.0f : 1.0f;
  r.epe_all = epe(pred_disp, gt_disp);
  r.epe_nonoccluded = epe(pred_disp, gt_disp, &visible);
  r.bad_1 = bad_pixel_rate(pred_disp, gt_disp, 1.0, &visible);
  r.bad_3 = bad_pixel_rate(pred_disp, gt_disp, 3.0, &visible);
  OcclusionScores o = occlusion_metrics(pred_occ, gt_occ);
  r.occ_precision = o.precision;
  r.occ_recall = o.recall;
  r.occ_f1 = o.f1;
  r.occ_empty = o.empty;
  auto [lo, hi] = std::minmax_element(gt_disp.values.data().begin(), gt_disp.values.data().end());
  r.gt_min = *lo;
  r.gt_max = *hi;
  return r;
}

MetricRow MetricReport::aggregate() const {
  MetricRow m;
  m.scene = "mean";
  if (rows.empty()) return m;
  const double n = static_cast<double>(rows.size());
  m.gt_min = rows[0].gt_min;
  m.gt_max = rows[0].gt_max;
  for (const auto &r : rows) {
    m.epe_all += r.epe_all / n;
    m.epe_nonoccluded += r.epe_nonoccluded / n;
    m.bad_1 += r.bad_1 / n;
    m.bad_3 += r.bad_3 / n;
    m.occ_precision += r.occ_precision / n;
    m.occ_recall += r.occ_recall / n;
    m.occ_f1 += r.occ_f1 / n;
    m.occ_empty = m.occ_empty || r.occ_empty;
    m.gt_min = std::min(m.gt_min, r.gt_min);
    m.gt_max = std::max(m.gt_max, r.gt_max);
  }
  return m;
}

std::string MetricReport::to_csv() const {
  std::ostringstream s;
  s << "# colormap=viridis range=[gt_min,gt_max] per scene; bad_1/bad_3 over non-occluded pixels";
  if (!label.empty()) s << "; variant=" << label;
  s << "\n";
  s << "scene,epe_all,epe_nonoccluded,bad_1,bad_3,occ_precision,occ_recall,occ_f1,occ_empty,gt_min,gt_max\n";
  auto line = [&](const MetricRow &r) {
    s << r.scene << "," << fmt(r.epe_all) << "," << fmt(r.epe_nonoccluded) << "," << fmt(r.bad_1) << ","
      << fmt(r.bad_3) << "," << fmt(r.occ_precision) << "," << fmt(r.occ_recall) << "," << fmt(r.occ_f1) << ","
      << (r.occ_empty ? 1 : 0) << "," << fmt(r.gt_min) << "," << fmt(r.gt_max) << "\n";
  };
  for (const auto &r : rows) line(r);
  line(aggregate());
  return s.str();
}

std::string MetricReport::to_table() const {
  const std::vector<std::string> head{"scene", "epe_all", "epe_noc", "bad_1", "bad_3", "occ_P", "occ_R", "occ_F1"};
  std::vector<std::vector<std::string>> cells{head};
  auto add = [&](const MetricRow &r) {
    cells.push_back({r.scene, fmt(r.epe_all), fmt(r.epe_nonoccluded), fmt(r.bad_1), fmt(r.bad_3),
                     fmt(r.occ_precision), fmt(r.occ_recall), fmt(r.occ_f1) + (r.occ_empty ? "*" : "")});
  };
  for (const auto &r : rows) add(r);
  add(aggregate());
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto &row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream s;
  if (!label.empty()) s << label << "\n";
  for (const auto &row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) s << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      else s << "  " << std::right << std::setw(static_cast<int>(width[i])) << row[i];
    }
    s << "\n";
  }
  return s.str();
}

ImageField colorize_disparity(const DisparityMap &d, double lo, double hi) {
  const int h = d.height(), w = d.width();
  ImageField out(3, h, w);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = d.values(0, y, x);
      double t = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
      double f = t * (kViridis.size() - 1);
      auto i = std::min<std::size_t>(static_cast<std::size_t>(f), kViridis.size() - 2);
      double a = f - static_cast<double>(i);
      for (int c = 0; c < 3; ++c)
        out(c, y, x) = static_cast<float>(kViridis[i][static_cast<std::size_t>(c)] * (1 - a) +
                                          kViridis[i + 1][static_cast<std::size_t>(c)] * a);
    }
  return out;
}

}  // namespace orstereo
