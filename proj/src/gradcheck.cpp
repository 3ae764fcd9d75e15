#include "orstereo/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "orstereo/losses.hpp"

namespace orstereo {
namespace {

using Rng = std::mt19937_64;

Tensor<double> random_tensor(Shape shape, double lo, double hi, Rng &rng) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double &v : t.data()) v = u(rng);
  return t;
}

/// Values in [lo, hi) whose fractional part stays in [0.15, 0.85], away from bilinear kinks.
Tensor<double> non_integer_tensor(Shape shape, int lo, int hi, Rng &rng) {
  Tensor<double> t(std::move(shape));
  std::uniform_int_distribution<int> whole(lo, hi - 1);
  std::uniform_real_distribution<double> frac(0.15, 0.85);
  for (double &v : t.data()) v = whole(rng) + frac(rng);
  return t;
}

Var<double> leaf(Tensor<double> t) { return Var<double>(std::move(t), true); }

double norm(const std::vector<double> &v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

class Suite {
 public:
  Suite(const GradCheckOptions &opt) : opt_(opt), rng_(opt.seed) {}

  /// Scalar = <f(inputs), R> for a fixed random R drawn on first evaluation.
  void run(const std::string &check, const std::vector<GradCheckGroup> &groups,
           const std::function<Var<double>()> &field) {
    auto weights = std::make_shared<Tensor<double>>();
    auto seed = rng_();
    auto eval = [field, weights, seed]() {
      Var<double> out = field();
      if (weights->empty()) {
        Rng r(seed);
        *weights = random_tensor(out.shape(), -1, 1, r);
      }
      return ops::dot_const(out, *weights);
    };
    double scale = opt_.fault_check == check ? opt_.fault_scale : 1.0;
    for (const auto &g : groups) report.entries.push_back(check_scalar_function(check, g, eval, opt_, rng_(), scale));
  }

  Rng &rng() { return rng_; }
  GradCheckReport report;

 private:
  const GradCheckOptions &opt_;
  Rng rng_;
};

std::vector<GradCheckGroup> param_groups(const ParamStore<double> &p, const std::string &prefix) {
  std::vector<GradCheckGroup> g;
  for (const auto &n : p.names())
    if (n.rfind(prefix, 0) == 0) g.push_back({n, p.get(n)});
  return g;
}

FeaturePyramid<double> random_pyramid(const ModelConfig &cfg, int h, int w, Rng &rng) {
  FeaturePyramid<double> p;
  for (int k = 0; k < ModelConfig::kLevels; ++k)
    p.levels.push_back(leaf(random_tensor({cfg.fe_channels[static_cast<std::size_t>(k)], h >> (k + 1), w >> (k + 1)},
                                          -1, 1, rng)));
  return p;
}

}  // namespace

GradCheckEntry check_scalar_function(const std::string &check, const GradCheckGroup &group,
                                     const std::function<Var<double>()> &eval, const GradCheckOptions &opt,
                                     std::uint64_t seed, double analytic_scale) {
  GradCheckEntry e;
  e.check = check;
  e.group = group.name;
  Var<double> x = group.leaf;
  if (!x.requires_grad()) throw ValidationError("gradcheck: group '" + group.name + "' is not a gradient leaf");
  x.zero_grad();
  eval().backward();
  Tensor<double> grad = x.grad().empty() ? Tensor<double>(x.shape()) : x.grad();
  Tensor<double> &val = x.mutable_value();
  const std::size_t n = val.size();
  const double h = opt.step;
  const double gmax = max_abs(grad);

  auto f_at = [&](const Tensor<double> &dir, double t) {
    NoGradGuard guard;
    Tensor<double> saved = val;
    for (std::size_t i = 0; i < n; ++i) val[i] += t * dir[i];
    double y = eval().value()[0];
    val = saved;
    return y;
  };

  Rng rng(seed);
  std::vector<double> analytic, numeric;
  auto probe = [&](const Tensor<double> &dir) {
    double nh = (f_at(dir, h) - f_at(dir, -h)) / (2 * h);
    double nh2 = (f_at(dir, h / 2) - f_at(dir, -h / 2)) / h;
    if (std::abs(nh - nh2) > 1e-5 * std::max(std::abs(nh), 1e-3 * gmax + 1e-12)) {
      ++e.non_smooth;
      return false;
    }
    double a = 0;
    for (std::size_t i = 0; i < n; ++i) a += grad[i] * dir[i];
    analytic.push_back(a * analytic_scale);
    numeric.push_back(nh);
    ++e.probes;
    return true;
  };

  Tensor<double> dir(x.shape());
  if (static_cast<int>(n) <= opt.full_limit) {
    for (std::size_t i = 0; i < n; ++i) {
      dir.fill(0);
      dir[i] = 1;
      probe(dir);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    int got = 0;
    for (int attempt = 0; got < opt.sampled_elements && attempt < 4 * opt.sampled_elements; ++attempt) {
      dir.fill(0);
      dir[pick(rng)] = 1;
      got += probe(dir);
    }
  }
  std::normal_distribution<double> gauss;
  int got = 0;
  for (int attempt = 0; got < opt.directions && attempt < 4 * opt.directions; ++attempt) {
    double s = 0;
    for (double &v : dir.data()) {
      v = gauss(rng);
      s += v * v;
    }
    for (double &v : dir.data()) v /= std::sqrt(s);
    got += probe(dir);
  }

  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  double denom = std::max({norm(analytic), norm(numeric), 1e-8});
  e.max_rel_error = norm(diff) / denom;
  e.passed = e.probes > 0 && e.max_rel_error <= opt.tolerance;
  return e;
}

bool GradCheckReport::passed() const {
  if (entries.empty()) return false;
  for (const auto &e : entries)
    if (!e.passed) return false;
  return true;
}

std::vector<std::pair<std::string, double>> GradCheckReport::per_check() const {
  std::vector<std::pair<std::string, double>> out;
  std::map<std::string, std::size_t> at;
  for (const auto &e : entries) {
    auto it = at.find(e.check);
    if (it == at.end()) {
      at[e.check] = out.size();
      out.emplace_back(e.check, e.max_rel_error);
    } else {
      out[it->second].second = std::max(out[it->second].second, e.max_rel_error);
    }
  }
  return out;
}

std::string GradCheckReport::to_text() const {
  std::map<std::string, std::pair<int, int>> counts;  // probes, groups failed
  for (const auto &e : entries) {
    counts[e.check].first += e.probes;
    counts[e.check].second += e.passed ? 0 : 1;
  }
  std::ostringstream s;
  s << std::left << std::setw(22) << "check" << std::setw(14) << "max_rel_err" << std::setw(8) << "probes"
    << "status\n";
  for (const auto &[name, err] : per_check()) {
    auto [probes, failed] = counts[name];
    s << std::setw(22) << name << std::setw(14) << std::scientific << std::setprecision(3) << err
      << std::defaultfloat << std::setw(8) << probes << (failed ? "FAIL" : "ok") << "\n";
  }
  s << "tolerance " << tolerance << ", " << (passed() ? "all checks passed" : "FAILED") << " in " << std::fixed
    << std::setprecision(1) << seconds << " s\n";
  return s.str();
}

GradCheckReport gradcheck_suite(const ModelConfig &cfg, const GradCheckOptions &opt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Suite suite(opt);
  Rng &rng = suite.rng();
  using ops::concat;

  {
    Var<double> a = leaf(random_tensor({2, 3, 4}, -2, 2, rng)), b = leaf(random_tensor({2, 3, 4}, -2, 2, rng));
    suite.run("add", {{"a", a}, {"b", b}}, [=] { return ops::add(a, b); });
    suite.run("sub", {{"a", a}, {"b", b}}, [=] { return ops::sub(a, b); });
    suite.run("mul", {{"a", a}, {"b", b}}, [=] { return ops::mul(a, b); });
    suite.run("affine", {{"a", a}}, [=] { return ops::affine(a, 1.7, -0.3); });
    suite.run("sigmoid", {{"a", a}}, [=] { return ops::sigmoid(a); });
    suite.run("tanh", {{"a", a}}, [=] { return ops::tanh(a); });
    suite.run("silu", {{"a", a}}, [=] { return ops::silu(a); });
    suite.run("concat_slice", {{"a", a}, {"b", b}},
              [=] { return ops::slice_channels(concat<double>({a, ops::mul(a, b), b}), 1, 2); });
  }
  {
    Var<double> x = leaf(random_tensor({3, 6, 7}, -1, 1, rng));
    Var<double> w3 = leaf(random_tensor({4, 3, 3, 3}, -0.5, 0.5, rng)), b = leaf(random_tensor({4}, -0.5, 0.5, rng));
    Var<double> w1 = leaf(random_tensor({4, 3, 1, 1}, -0.5, 0.5, rng));
    suite.run("conv2d", {{"input", x}, {"weight", w3}, {"bias", b}}, [=] { return ops::conv2d(x, w3, b, 1, 1); });
    suite.run("conv2d_stride2", {{"input", x}, {"weight", w3}, {"bias", b}},
              [=] { return ops::conv2d(x, w3, b, 2, 1); });
    suite.run("conv2d_1x1", {{"input", x}, {"weight", w1}, {"bias", b}}, [=] { return ops::conv2d(x, w1, b, 1, 0); });
    suite.run("resize_bilinear", {{"input", x}}, [=] { return ops::resize_bilinear(x, 9, 4, 1.5); });
  }
  {
    Var<double> src = leaf(random_tensor({2, 4, 9}, -1, 1, rng));
    Var<double> disp = leaf(non_integer_tensor({1, 4, 9}, 0, 4, rng));
    suite.run("warp_horizontal", {{"source", src}, {"disparity", disp}},
              [=] { return ops::warp_horizontal(src, disp); });
  }
  {
    Var<double> l = leaf(random_tensor({4, 3, 8}, -1, 1, rng)), r = leaf(random_tensor({4, 3, 8}, -1, 1, rng));
    suite.run("local_correlation", {{"left", l}, {"right", r}}, [=] { return ops::local_correlation(l, r, 2); });
    suite.run("correlation_volume", {{"left", l}, {"right", r}},
              [=] { return ops::correlation_volume(l, r, 4, 2); });
  }
  {
    Var<double> c = leaf(random_tensor({3, 4, 5}, -2, 2, rng));
    suite.run("softmax_channels", {{"input", c}}, [=] { return ops::softmax_channels(c); });
    suite.run("soft_argmin", {{"cost", c}}, [=] { return ops::soft_argmin(c); });
  }
  {
    Var<double> a = leaf(random_tensor({2, 3, 4}, -2, 2, rng)), s = leaf(random_tensor({1}, 0.5, 1.5, rng));
    suite.run("mean_all", {{"input", a}}, [=] { return ops::mean_all(a); });
    suite.run("std_all", {{"input", a}}, [=] { return ops::std_all(a); });
    suite.run("scalar_broadcast", {{"field", a}, {"scalar", s}},
              [=] { return ops::div_scalar(ops::mul_scalar(ops::sub_scalar(a, s), s), s); });
  }
  {
    Tensor<double> target = random_tensor({1, 4, 6}, -2, 2, rng), e(target.shape());
    std::uniform_real_distribution<double> mag(0.1, 0.8), big(1.2, 3.0);
    std::bernoulli_distribution coin;
    for (std::size_t i = 0; i < e.size(); ++i)
      e[i] = target[i] + (coin(rng) ? 1 : -1) * (i % 2 ? mag(rng) : big(rng));
    Var<double> pred = leaf(e);
    suite.run("smooth_l1", {{"prediction", pred}}, [=] { return ops::smooth_l1(pred, target); });
    Var<double> scores = leaf(random_tensor({2, 4, 6}, -3, 3, rng));
    Tensor<double> probs = random_tensor({2, 4, 6}, 0, 1, rng);
    for (std::size_t p = 0; p < probs.plane(); ++p) probs[probs.plane() + p] = 1 - probs[p];
    suite.run("cross_entropy", {{"scores", scores}}, [=] { return ops::cross_entropy(scores, probs); });
  }
  {
    Var<double> d = leaf(random_tensor({1, 4, 6}, 5, 20, rng));
    suite.run("nlr_normalize", {{"disparity", d}}, [=] { return nlr_normalize(d, 1e-6).dbar; });
  }

  auto model = std::make_shared<StereoModel<double>>(cfg, opt.seed + 1);
  const auto &P = model->params();
  auto with = [](std::vector<GradCheckGroup> a, const std::vector<GradCheckGroup> &b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  constexpr int kH = 64, kW = 64;
  {
    Var<double> img = leaf(random_tensor({3, kH, kW}, 0, 1, rng));
    suite.run("feature_extractor", with({{"image", img}}, param_groups(P, "fe.")), [=] {
      FeaturePyramid<double> p = model->extract_features(img);
      std::vector<Var<double>> flat;
      for (const auto &l : p.levels) flat.push_back(ops::resize_bilinear(l, 2, 2));
      return concat(flat);
    });
  }
  const int c3 = cfg.fe_channels[ModelConfig::kBaseLevel];
  {
    Var<double> l = leaf(random_tensor({c3, 4, 6}, -1, 1, rng)), r = leaf(random_tensor({c3, 4, 6}, -1, 1, rng));
    suite.run("base_disparity", with({{"left", l}, {"right", r}}, param_groups(P, "bde.")),
              [=] { return model->bde_initial_disparity(l, r); });
    suite.run("base_occlusion", with({{"left", l}, {"warped", r}}, param_groups(P, "bme.")),
              [=] { return model->bme_initial_occlusion(l, r); });
  }
  {
    FeaturePyramid<double> pl = random_pyramid(cfg, kH, kW, rng), pr = random_pyramid(cfg, kH, kW, rng);
    const int h1 = kH >> (ModelConfig::kRefineLevel + 1), w1 = kW >> (ModelConfig::kRefineLevel + 1);
    Var<double> occ = leaf(random_tensor({2, 4, 4}, -1, 1, rng));
    Var<double> d1 = leaf(non_integer_tensor({1, h1, w1}, 0, 3, rng));
    std::vector<GradCheckGroup> g{{"initial_occlusion", occ}, {"disparity", d1}};
    for (int l : cfg.corr_levels) {
      g.push_back({"left_level" + std::to_string(l), pl.levels[static_cast<std::size_t>(l)]});
      g.push_back({"right_level" + std::to_string(l), pr.levels[static_cast<std::size_t>(l)]});
    }
    suite.run("recurrent_update", with(g, param_groups(P, "rru.")), [=] {
      auto init = model->rru_init(pl, pr, occ);
      RRURun<double> run = model->rru_run(init.state, pl, pr, d1, init.o1, 2);
      return concat<double>({run.d1, run.o1});
    });
  }
  {
    Var<double> img = leaf(random_tensor({3, 32, 32}, 0, 1, rng));
    Var<double> d0 = leaf(random_tensor({1, 32, 32}, 5, 20, rng));
    suite.run("local_refinement", with({{"image", img}, {"disparity", d0}}, param_groups(P, "nlr.")),
              [=] { return model->nlr_refine(img, d0); });
  }
  {
    // Loss composition over every head output it consumes.
    const int hb = kH >> (ModelConfig::kBaseLevel + 1), wb = kW >> (ModelConfig::kBaseLevel + 1);
    const int h1 = kH >> (ModelConfig::kRefineLevel + 1), w1 = kW >> (ModelConfig::kRefineLevel + 1);
    Tensor<double> gt = random_tensor({1, kH, kW}, 0, 16, rng), labels(Shape{2, kH, kW});
    std::bernoulli_distribution occluded(0.2);
    for (std::size_t p = 0; p < labels.plane(); ++p) {
      bool o = occluded(rng);
      labels[p] = o ? 0 : 1;
      labels[labels.plane() + p] = o ? 1 : 0;
    }
    auto targets = std::make_shared<LossTargets<double>>(make_loss_targets(gt, labels));
    const int n = 2;
    Phase1Output<double> out;
    out.d4 = leaf(random_tensor({1, hb, wb}, 0, 1, rng));
    out.occ_init = leaf(random_tensor({2, hb, wb}, -2, 2, rng));
    out.base_refine = leaf(random_tensor({1, h1, w1}, 0, 4, rng));
    out.disparity = leaf(random_tensor({1, kH, kW}, 0, 16, rng));
    std::vector<GradCheckGroup> g{{"base_disparity", out.d4},
                                  {"base_occlusion", out.occ_init},
                                  {"base_at_refine_level", out.base_refine},
                                  {"final_disparity", out.disparity}};
    for (int i = 0; i < n; ++i) {
      RRUSnapshot<double> snap;
      snap.d1 = leaf(random_tensor({1, h1, w1}, -2, 2, rng));
      snap.o1 = leaf(random_tensor({2, h1, w1}, -2, 2, rng));
      g.push_back({"residual" + std::to_string(i + 1), snap.d1});
      g.push_back({"occlusion" + std::to_string(i + 1), snap.o1});
      out.history.push_back(snap);
    }
    suite.run("training_loss", g, [=] { return total_loss(out, *targets, LossWeights{}, n).total; });
  }
  suite.report.tolerance = opt.tolerance;
  suite.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return suite.report;
}

}  // namespace orstereo
