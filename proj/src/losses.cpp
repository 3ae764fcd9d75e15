#include "orstereo/losses.hpp"

#include <cmath>

namespace orstereo {

void LossWeights::validate() const {
  for (double v : {lam_d4, lam_o, lam_d1, lam_o1, lam_d})
    if (!(v >= 0)) throw ValidationError("LossWeights: weights must be >= 0");
  for (double g : {gamma_d, gamma_o})
    if (!(g > 0 && g <= 1)) throw ValidationError("LossWeights: gammas must be in (0, 1]");
}

double iteration_weight(double gamma, int i, int n) { return std::pow(gamma, n - i + 1); }

template <typename T>
LossTargets<T> make_loss_targets(const Tensor<T> &disparity, const Tensor<T> &occ_labels) {
  require_rank3(disparity, "make_loss_targets");
  if (disparity.channels() != 1 || occ_labels.channels() != 2)
    throw ShapeError("make_loss_targets: expected 1-channel disparity and 2-channel labels");
  require_same_hw(disparity, occ_labels, "make_loss_targets");
  const int h = disparity.height(), w = disparity.width();
  const int fb = 1 << (ModelConfig::kBaseLevel + 1), fr = 1 << (ModelConfig::kRefineLevel + 1);
  if (h % fb || w % fb) throw ShapeError("make_loss_targets: size must be divisible by " + std::to_string(fb));
  NoGradGuard guard;
  Var<T> d(disparity), o(occ_labels);
  LossTargets<T> t;
  t.disparity = disparity;
  t.disparity_base = resize_disparity_var(d, h / fb, w / fb).value();
  t.disparity_refine = resize_disparity_var(d, h / fr, w / fr).value();
  t.occ_base = ops::resize_bilinear(o, h / fb, w / fb).value();
  t.occ_refine = ops::resize_bilinear(o, h / fr, w / fr).value();
  return t;
}

template <typename T>
LossResult<T> combine_loss_terms(const Var<T> &base_disp, const Var<T> &base_occ, const std::vector<Var<T>> &refine_disp,
                                 const std::vector<Var<T>> &refine_occ, const Var<T> &final_disp,
                                 const LossWeights &w) {
  w.validate();
  const int n = static_cast<int>(refine_disp.size());
  if (n < 1 || refine_occ.size() != refine_disp.size())
    throw ValidationError("combine_loss_terms: need one disparity and one occlusion term per iteration");
  auto check = [](const Var<T> &v, const std::string &name) {
    if (!std::isfinite(static_cast<double>(v.value()[0])))
      throw NumericHealthError("non-finite loss term '" + name + "'", -1);
  };
  const auto &names = loss_term_names();
  check(base_disp, names[0]);
  check(base_occ, names[1]);
  for (int i = 0; i < n; ++i) {
    check(refine_disp[static_cast<std::size_t>(i)], names[2]);
    check(refine_occ[static_cast<std::size_t>(i)], names[3]);
  }
  check(final_disp, names[4]);

  LossResult<T> r;
  Var<T> g0 = ops::affine(base_disp, static_cast<T>(w.lam_d4));
  Var<T> g1 = ops::affine(base_occ, static_cast<T>(w.lam_o));
  Var<T> g2, g3;
  for (int i = 1; i <= n; ++i) {
    Var<T> a = ops::affine(refine_disp[static_cast<std::size_t>(i - 1)],
                           static_cast<T>(w.lam_d1 * iteration_weight(w.gamma_d, i, n)));
    Var<T> b = ops::affine(refine_occ[static_cast<std::size_t>(i - 1)],
                           static_cast<T>(w.lam_o1 * iteration_weight(w.gamma_o, i, n)));
    g2 = i == 1 ? a : ops::add(g2, a);
    g3 = i == 1 ? b : ops::add(g3, b);
  }
  Var<T> g4 = ops::affine(final_disp, static_cast<T>(w.lam_d));
  r.total = ops::add(ops::add(ops::add(ops::add(g0, g1), g2), g3), g4);
  r.terms = {static_cast<double>(g0.value()[0]), static_cast<double>(g1.value()[0]),
             static_cast<double>(g2.value()[0]), static_cast<double>(g3.value()[0]),
             static_cast<double>(g4.value()[0])};
  check(r.total, "total");
  return r;
}

template <typename T>
LossResult<T> total_loss(const Phase1Output<T> &out, const LossTargets<T> &targets, const LossWeights &w, int n) {
  if (static_cast<int>(out.history.size()) != n)
    throw ValidationError("total_loss: history has " + std::to_string(out.history.size()) + " iterations, expected " +
                          std::to_string(n));
  if (out.base_refine.shape() != targets.disparity_refine.shape())
    throw ShapeError("total_loss: refinement-level target shape mismatch");
  // Residual d1 against (gt - base) is evaluated as (base + d1) against gt.
  std::vector<Var<T>> rd, ro;
  for (const auto &snap : out.history) {
    rd.push_back(ops::smooth_l1(ops::add(out.base_refine, snap.d1), targets.disparity_refine));
    ro.push_back(ops::cross_entropy(snap.o1, targets.occ_refine));
  }
  return combine_loss_terms(ops::smooth_l1(out.d4, targets.disparity_base),
                            ops::cross_entropy(out.occ_init, targets.occ_base), rd, ro,
                            ops::smooth_l1(out.disparity, targets.disparity), w);
}

double smooth_l1(const DisparityMap &pred, const DisparityMap &target, const ValidityMask *mask) {
  NoGradGuard guard;
  return ops::smooth_l1(Var<float>(pred.values), target.values, mask).value()[0];
}

double cross_entropy_occ(const OcclusionField &scores, const OcclusionField &labels) {
  NoGradGuard guard;
  return ops::cross_entropy(Var<float>(scores.scores), labels.scores).value()[0];
}

#define ORSTEREO_INSTANTIATE_LOSSES(T)                                                                            \
  template LossTargets<T> make_loss_targets(const Tensor<T> &, const Tensor<T> &);                                \
  template LossResult<T> combine_loss_terms(const Var<T> &, const Var<T> &, const std::vector<Var<T>> &,          \
                                            const std::vector<Var<T>> &, const Var<T> &, const LossWeights &);    \
  template LossResult<T> total_loss(const Phase1Output<T> &, const LossTargets<T> &, const LossWeights &, int);

ORSTEREO_INSTANTIATE_LOSSES(float)
ORSTEREO_INSTANTIATE_LOSSES(double)

}  // namespace orstereo
