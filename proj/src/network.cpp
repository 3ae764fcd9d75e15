#include "orstereo/network.hpp"

#include <cmath>
#include <sstream>

#include "orstereo/config_file.hpp"

namespace orstereo {

void ModelConfig::validate() const {
  auto fail = [](const std::string &m) { throw ValidationError("ModelConfig: " + m); };
  if (static_cast<int>(fe_channels.size()) != kLevels) fail("fe_channels must list 5 levels");
  for (int c : fe_channels)
    if (c < 1) fail("channel counts must be >= 1");
  if (hidden_channels < 1 || context_channels < 1 || motion_channels < 1 || head_channels < 1 || bde_channels < 1 ||
      bme_channels < 1 || nlr_channels < 1)
    fail("channel counts must be >= 1");
  if (corr_radius < 0) fail("corr_radius must be >= 0");
  if (corr_levels.empty()) fail("corr_levels must not be empty");
  for (int l : corr_levels)
    if (l < 0 || l >= kLevels) fail("corr level out of range");
  if (bde_depth < 0) fail("bde_depth must be >= 0");
  if (max_disparity < 16 || max_disparity % 16 != 0) fail("max_disparity must be a positive multiple of 16");
  if (bde_groups < 1 || fe_channels[kBaseLevel] % bde_groups != 0)
    fail("base-level channels must be divisible by bde_groups");
  if (rru_iters_train < 1 || rru_iters_infer < 1) fail("iteration counts must be >= 1");
  if (!(nlr_epsilon > 0)) fail("nlr_epsilon must be > 0");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.fe_channels = {3, 4, 4, 4, 3};
  c.hidden_channels = 4;
  c.context_channels = 3;
  c.motion_channels = 3;
  c.head_channels = 3;
  c.corr_radius = 1;
  c.bde_groups = 2;
  c.bde_channels = 3;
  c.bde_depth = 1;
  c.bme_channels = 3;
  c.nlr_channels = 3;
  c.max_disparity = 48;
  c.rru_iters_train = 2;
  c.rru_iters_infer = 2;
  return c;
}

KeyValues ModelConfig::to_key_values() const {
  return {{"model.fe_channels", join_ints(fe_channels)},
          {"model.hidden_channels", std::to_string(hidden_channels)},
          {"model.context_channels", std::to_string(context_channels)},
          {"model.motion_channels", std::to_string(motion_channels)},
          {"model.head_channels", std::to_string(head_channels)},
          {"model.corr_radius", std::to_string(corr_radius)},
          {"model.corr_levels", join_ints(corr_levels)},
          {"model.bde_groups", std::to_string(bde_groups)},
          {"model.bde_channels", std::to_string(bde_channels)},
          {"model.bde_depth", std::to_string(bde_depth)},
          {"model.bme_channels", std::to_string(bme_channels)},
          {"model.nlr_channels", std::to_string(nlr_channels)},
          {"model.max_disparity", std::to_string(max_disparity)},
          {"model.rru_iters_train", std::to_string(rru_iters_train)},
          {"model.rru_iters_infer", std::to_string(rru_iters_infer)},
          {"model.use_occlusion_path", use_occlusion_path ? "1" : "0"},
          {"model.use_nlr", use_nlr ? "1" : "0"},
          {"model.detach_between_steps", detach_between_steps ? "1" : "0"},
          {"model.nlr_epsilon", format_double(nlr_epsilon)}};
}

ModelConfig ModelConfig::from_key_values(const KeyValues &kv) {
  ModelConfig c;
  c.fe_channels = kv_int_list(kv, "model.fe_channels", c.fe_channels);
  c.hidden_channels = kv_int(kv, "model.hidden_channels", c.hidden_channels);
  c.context_channels = kv_int(kv, "model.context_channels", c.context_channels);
  c.motion_channels = kv_int(kv, "model.motion_channels", c.motion_channels);
  c.head_channels = kv_int(kv, "model.head_channels", c.head_channels);
  c.corr_radius = kv_int(kv, "model.corr_radius", c.corr_radius);
  c.corr_levels = kv_int_list(kv, "model.corr_levels", c.corr_levels);
  c.bde_groups = kv_int(kv, "model.bde_groups", c.bde_groups);
  c.bde_channels = kv_int(kv, "model.bde_channels", c.bde_channels);
  c.bde_depth = kv_int(kv, "model.bde_depth", c.bde_depth);
  c.bme_channels = kv_int(kv, "model.bme_channels", c.bme_channels);
  c.nlr_channels = kv_int(kv, "model.nlr_channels", c.nlr_channels);
  c.max_disparity = kv_int(kv, "model.max_disparity", c.max_disparity);
  c.rru_iters_train = kv_int(kv, "model.rru_iters_train", c.rru_iters_train);
  c.rru_iters_infer = kv_int(kv, "model.rru_iters_infer", c.rru_iters_infer);
  c.use_occlusion_path = kv_bool(kv, "model.use_occlusion_path", c.use_occlusion_path);
  c.use_nlr = kv_bool(kv, "model.use_nlr", c.use_nlr);
  c.detach_between_steps = kv_bool(kv, "model.detach_between_steps", c.detach_between_steps);
  c.nlr_epsilon = kv_double(kv, "model.nlr_epsilon", c.nlr_epsilon);
  c.validate();
  return c;
}

template <typename T>
Var<T> apply_occlusion_update(const Var<T> &o1, const Var<T> &r_occ) {
  if (o1.value().rank() != 3 || o1.value().channels() != 2) throw ShapeError("occlusion update: o1 must have 2 channels");
  Var<T> delta = ops::concat<T>({ops::affine(r_occ, T(-1)), r_occ});
  return ops::add(o1, delta);
}

template <typename T>
Var<T> apply_disparity_update(const Var<T> &d1, const Var<T> &r_disp) {
  return ops::add(d1, r_disp);
}

template <typename T>
Normalized<T> nlr_normalize(const Var<T> &d0, T eps) {
  Var<T> m = ops::mean_all(d0);
  Var<T> s = ops::std_all(d0);
  Var<T> dbar = ops::div_scalar(ops::sub_scalar(d0, m), ops::affine(s, T(1), eps));
  return {dbar, m, s};
}

template <typename T>
Var<T> nlr_denormalize(const Var<T> &rbar, const Var<T> &stddev, T eps) {
  return ops::mul_scalar(rbar, ops::affine(stddev, T(1), eps));
}

template <typename T>
Var<T> resize_disparity_var(const Var<T> &d, int h, int w) {
  const T scale = static_cast<T>(w) / static_cast<T>(d.value().width());
  return ops::resize_bilinear(d, h, w, scale);
}

template <typename T>
StereoModel<T>::StereoModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build(seed);
}

template <typename T>
StereoModel<T>::StereoModel(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  // Validate names and shapes against a freshly built layout.
  build(0);
  for (const auto &name : params_.names()) {
    if (!params.contains(name)) throw ValidationError("parameter set lacks '" + name + "'");
    if (params.get(name).shape() != params_.get(name).shape())
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(params.get(name).shape()) + ", expected " +
                       shape_str(params_.get(name).shape()));
  }
  if (params.size() != params_.size()) throw ValidationError("parameter set has unexpected extra entries");
  params_ = std::move(params);
}

template <typename T>
void StereoModel<T>::build(std::uint64_t seed) {
  params_ = ParamStore<T>();
  Initializer init(seed);
  auto add_conv = [&](const std::string &name, int cin, int cout, int k, double gain = 1.0) {
    params_.add(name + ".w", init.conv_weight<T>(cout, cin, k, gain));
    params_.add(name + ".b", init.zeros<T>({cout}));
  };
  const auto &fc = cfg_.fe_channels;
  // Feature extractor: stride-2 stage entry followed by one residual block per level.
  for (int l = 0; l < ModelConfig::kLevels; ++l) {
    int cin = l == 0 ? 3 : fc[l - 1];
    std::string p = "fe.l" + std::to_string(l);
    add_conv(p + ".down", cin, fc[l], 3);
    add_conv(p + ".res1", fc[l], fc[l], 3);
    add_conv(p + ".res2", fc[l], fc[l], 3, 0.5);
  }
  const int cb = fc[ModelConfig::kBaseLevel];
  const int k = cfg_.hypotheses();
  add_conv("bde.agg0", cfg_.bde_groups * k, cfg_.bde_channels, 3);
  for (int i = 1; i <= cfg_.bde_depth; ++i) add_conv("bde.agg" + std::to_string(i), cfg_.bde_channels, cfg_.bde_channels, 3);
  add_conv("bde.cost", cfg_.bde_channels, k, 3, 0.5);

  const int cm = cfg_.bme_channels;
  add_conv("bme.enc1", 2 * cb, cm, 3);
  add_conv("bme.enc2", cm, cm, 3);
  add_conv("bme.enc3", cm, cm, 3);
  add_conv("bme.dec", 2 * cm, cm, 3);
  add_conv("bme.out", cm, 2, 3, 0.5);

  const int c1 = fc[ModelConfig::kRefineLevel];
  const int ch = cfg_.hidden_channels, cc = cfg_.context_channels, cmo = cfg_.motion_channels;
  const int corr_ch = static_cast<int>(cfg_.corr_levels.size()) * (2 * cfg_.corr_radius + 1);
  add_conv("rru.hidden", c1, ch, 3);
  add_conv("rru.context", c1, cc, 3);
  add_conv("rru.motion", corr_ch + 3, cmo, 3);
  const int cx = cmo + 3 + cc;
  add_conv("rru.gru_zr", ch + cx, 2 * ch, 3);
  add_conv("rru.gru_q", ch + cx, ch, 3);
  add_conv("rru.head", ch, cfg_.head_channels, 3);
  add_conv("rru.out", cfg_.head_channels, 2, 3, 0.1);

  const int cn = cfg_.nlr_channels;
  add_conv("nlr.feat1", 3, cn, 3);
  add_conv("nlr.feat2", cn, cn, 3);
  add_conv("nlr.enc1", cn + 1, cn, 3);
  add_conv("nlr.enc2", cn, 2 * cn, 3);
  add_conv("nlr.enc3", 2 * cn, 2 * cn, 3);
  add_conv("nlr.dec", 3 * cn, cn, 3);
  add_conv("nlr.out", cn, 2, 3, 0.1);
}

template <typename T>
Var<T> StereoModel<T>::conv(const std::string &name, const Var<T> &x, int stride) const {
  const Var<T> &w = params_.get(name + ".w");
  int k = w.value().dim(2);
  return ops::conv2d(x, w, params_.get(name + ".b"), stride, k / 2);
}

template <typename T>
Var<T> StereoModel<T>::res_block(const std::string &name, const Var<T> &x) const {
  Var<T> y = ops::silu(conv(name + ".res1", x));
  return ops::silu(ops::add(x, conv(name + ".res2", y)));
}

template <typename T>
Var<T> StereoModel<T>::normalize_image(const Var<T> &image) const {
  return ops::affine(image, T(2), T(-1));
}

template <typename T>
FeaturePyramid<T> StereoModel<T>::extract_features(const Var<T> &image) const {
  const Tensor<T> &v = image.value();
  require_rank3(v, "extract_features");
  if (v.channels() != 3) throw ShapeError("extract_features: expected a 3-channel image, got " + shape_str(v.shape()));
  if (v.height() % 32 != 0 || v.width() % 32 != 0)
    throw ShapeError("extract_features: image size " + shape_str(v.shape()) + " is not divisible by 32");
  FeaturePyramid<T> pyr;
  Var<T> x = normalize_image(image);
  for (int l = 0; l < ModelConfig::kLevels; ++l) {
    std::string p = "fe.l" + std::to_string(l);
    x = ops::silu(conv(p + ".down", x, 2));
    x = res_block(p, x);
    pyr.levels.push_back(x);
  }
  return pyr;
}

template <typename T>
Var<T> StereoModel<T>::bde_cost(const Var<T> &left4, const Var<T> &right4) const {
  Var<T> x = ops::correlation_volume(left4, right4, cfg_.hypotheses(), cfg_.bde_groups);
  for (int i = 0; i <= cfg_.bde_depth; ++i) x = ops::silu(conv("bde.agg" + std::to_string(i), x));
  return conv("bde.cost", x);
}

template <typename T>
Var<T> StereoModel<T>::bde_initial_disparity(const Var<T> &left4, const Var<T> &right4) const {
  if (left4.shape() != right4.shape()) throw ShapeError("bde: left/right feature shapes differ");
  return ops::soft_argmin(bde_cost(left4, right4));
}

template <typename T>
Var<T> StereoModel<T>::bme_initial_occlusion(const Var<T> &left4, const Var<T> &warped4) const {
  if (left4.shape() != warped4.shape()) throw ShapeError("bme: left/warped feature shapes differ");
  Var<T> e1 = ops::silu(conv("bme.enc1", ops::concat<T>({left4, warped4})));
  Var<T> e2 = ops::silu(conv("bme.enc2", e1, 2));
  e2 = ops::silu(conv("bme.enc3", e2));
  Var<T> up = ops::resize_bilinear(e2, e1.value().height(), e1.value().width());
  Var<T> d = ops::silu(conv("bme.dec", ops::concat<T>({up, e1})));
  return conv("bme.out", d);
}

template <typename T>
FeaturePyramid<T> StereoModel<T>::warp_pyramid(const FeaturePyramid<T> &right, const Var<T> &disparity) const {
  FeaturePyramid<T> out;
  for (const auto &f : right.levels) {
    Var<T> d = resize_disparity_var(disparity, f.value().height(), f.value().width());
    out.levels.push_back(ops::warp_horizontal(f, d));
  }
  return out;
}

template <typename T>
typename StereoModel<T>::InitOutput StereoModel<T>::rru_init(const FeaturePyramid<T> &left,
                                                             const FeaturePyramid<T> &right_warped,
                                                             const Var<T> &occ_init) const {
  if (left.levels.size() != static_cast<std::size_t>(ModelConfig::kLevels) ||
      right_warped.levels.size() != left.levels.size())
    throw ShapeError("rru_init: pyramids must have 5 levels each");
  const Var<T> &f1 = left.levels[ModelConfig::kRefineLevel];
  const int h = f1.value().height(), w = f1.value().width();
  InitOutput out;
  out.state.hidden = ops::tanh(conv("rru.hidden", f1));
  out.state.context = ops::silu(conv("rru.context", f1));
  out.d1 = Var<T>(Tensor<T>(1, h, w));
  out.o1 = ops::resize_bilinear(occ_init, h, w);
  return out;
}

template <typename T>
RRUStepOutput<T> StereoModel<T>::rru_step(const RRUState<T> &state, const FeaturePyramid<T> &left,
                                          const FeaturePyramid<T> &right_warped, const Var<T> &d1, const Var<T> &o1,
                                          int iteration) const {
  const int h = d1.value().height(), w = d1.value().width();
  if (state.hidden.value().height() != h || state.hidden.value().width() != w ||
      o1.value().height() != h || o1.value().width() != w)
    throw ShapeError("rru_step: state/disparity/occlusion sizes disagree");
  std::vector<Var<T>> corr;
  for (int l : cfg_.corr_levels) {
    const Var<T> &fl = left.levels.at(static_cast<std::size_t>(l));
    const Var<T> &fr = right_warped.levels.at(static_cast<std::size_t>(l));
    const int hl = fl.value().height(), wl = fl.value().width();
    Var<T> dl = resize_disparity_var(d1, hl, wl);
    Var<T> c = ops::local_correlation(fl, ops::warp_horizontal(fr, dl), cfg_.corr_radius);
    corr.push_back(ops::resize_bilinear(c, h, w));
  }
  Var<T> s_o = cfg_.use_occlusion_path ? ops::softmax_channels(o1) : Var<T>(Tensor<T>(2, h, w));
  corr.push_back(s_o);
  corr.push_back(d1);
  Var<T> motion = ops::silu(conv("rru.motion", ops::concat(corr)));
  Var<T> x = ops::concat<T>({motion, s_o, d1, state.context});

  const int ch = cfg_.hidden_channels;
  Var<T> zr = ops::sigmoid(conv("rru.gru_zr", ops::concat<T>({state.hidden, x})));
  Var<T> z = ops::slice_channels(zr, 0, ch);
  Var<T> r = ops::slice_channels(zr, ch, ch);
  Var<T> q = ops::tanh(conv("rru.gru_q", ops::concat<T>({ops::mul(r, state.hidden), x})));
  Var<T> hidden = ops::add(state.hidden, ops::mul(z, ops::sub(q, state.hidden)));

  Var<T> out = conv("rru.out", ops::silu(conv("rru.head", hidden)));
  RRUStepOutput<T> res;
  res.state = {hidden, state.context};
  res.residuals.r_disp = ops::slice_channels(out, 0, 1);
  res.residuals.r_occ = ops::sigmoid(ops::slice_channels(out, 1, 1));
  res.d1 = apply_disparity_update(d1, res.residuals.r_disp);
  res.o1 = cfg_.use_occlusion_path ? apply_occlusion_update(o1, res.residuals.r_occ) : o1;

  if (!hidden.value().all_finite() || !res.d1.value().all_finite() || !res.o1.value().all_finite())
    throw NumericHealthError("rru_step: non-finite values at iteration " + std::to_string(iteration), iteration);
  return res;
}

template <typename T>
RRURun<T> StereoModel<T>::rru_run(RRUState<T> state, const FeaturePyramid<T> &left,
                                  const FeaturePyramid<T> &right_warped, Var<T> d1, Var<T> o1, int n,
                                  const StopCriterion<T> &criterion) const {
  if (n < 1) throw ValidationError("rru_run: iteration count must be >= 1");
  RRURun<T> run;
  for (int i = 1; i <= n; ++i) {
    if (cfg_.detach_between_steps && i > 1) d1 = Var<T>(d1.value());
    RRUStepOutput<T> s = rru_step(state, left, right_warped, d1, o1, i);
    state = s.state;
    d1 = s.d1;
    o1 = s.o1;
    run.history.push_back({d1, o1});
    if (criterion && criterion(i, d1)) break;
  }
  run.d1 = d1;
  run.o1 = o1;
  return run;
}

template <typename T>
std::pair<Var<T>, Var<T>> StereoModel<T>::nlr_residual(const Var<T> &left_image, const Var<T> &dbar) const {
  Var<T> f = ops::silu(conv("nlr.feat1", normalize_image(left_image)));
  f = ops::silu(conv("nlr.feat2", f));
  Var<T> e1 = ops::silu(conv("nlr.enc1", ops::concat<T>({f, dbar})));
  Var<T> e2 = ops::silu(conv("nlr.enc2", e1, 2));
  e2 = ops::silu(conv("nlr.enc3", e2));
  Var<T> up = ops::resize_bilinear(e2, e1.value().height(), e1.value().width());
  Var<T> d = ops::silu(conv("nlr.dec", ops::concat<T>({up, e1})));
  Var<T> out = conv("nlr.out", d);
  return {ops::slice_channels(out, 0, 1), ops::sigmoid(ops::slice_channels(out, 1, 1))};
}

template <typename T>
Var<T> StereoModel<T>::nlr_refine(const Var<T> &left_image, const Var<T> &d0) const {
  require_same_hw(left_image.value(), d0.value(), "nlr_refine");
  if (!cfg_.use_nlr) return d0;
  const T eps = static_cast<T>(cfg_.nlr_epsilon);
  Normalized<T> n = nlr_normalize(d0, eps);
  auto [rbar, weight] = nlr_residual(left_image, n.dbar);
  return ops::add(d0, ops::mul(weight, nlr_denormalize(rbar, n.stddev, eps)));
}

template <typename T>
Phase1Output<T> StereoModel<T>::forward_phase1(const Var<T> &left, const Var<T> &right, int iterations) const {
  if (left.shape() != right.shape())
    throw ShapeError("forward_phase1: left " + shape_str(left.shape()) + " vs right " + shape_str(right.shape()));
  const int h = left.value().height(), w = left.value().width();
  FeaturePyramid<T> pl = extract_features(left);
  FeaturePyramid<T> pr = extract_features(right);
  constexpr auto base = static_cast<std::size_t>(ModelConfig::kBaseLevel);
  Phase1Output<T> out;
  out.d4 = bde_initial_disparity(pl.levels[base], pr.levels[base]);
  FeaturePyramid<T> pw = warp_pyramid(pr, out.d4);
  out.occ_init = bme_initial_occlusion(pl.levels[base], pw.levels[base]);
  InitOutput init = rru_init(pl, pw, out.occ_init);
  RRURun<T> run = rru_run(init.state, pl, pw, init.d1, init.o1, iterations);
  out.history = run.history;
  const int h1 = init.d1.value().height(), w1 = init.d1.value().width();
  out.base_refine = resize_disparity_var(out.d4, h1, w1);
  out.d1_total = ops::add(out.base_refine, run.d1);
  out.d0 = resize_disparity_var(out.d1_total, h, w);
  out.disparity = nlr_refine(left, out.d0);
  out.occlusion = ops::resize_bilinear(run.o1, h, w);
  return out;
}

template class StereoModel<float>;
template class StereoModel<double>;

#define ORSTEREO_INSTANTIATE_NET(T)                                              \
  template Var<T> apply_occlusion_update(const Var<T> &, const Var<T> &);        \
  template Var<T> apply_disparity_update(const Var<T> &, const Var<T> &);        \
  template Normalized<T> nlr_normalize(const Var<T> &, T);                       \
  template Var<T> nlr_denormalize(const Var<T> &, const Var<T> &, T);            \
  template Var<T> resize_disparity_var(const Var<T> &, int, int);

ORSTEREO_INSTANTIATE_NET(float)
ORSTEREO_INSTANTIATE_NET(double)

}  // namespace orstereo
