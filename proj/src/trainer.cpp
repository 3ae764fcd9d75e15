#include "orstereo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include "orstereo/checkpoint.hpp"

namespace orstereo {
namespace {

std::string num(double v) { return format_double(v); }

Tensor<float> flip_rows(const Tensor<float> &t) {
  Tensor<float> out(t.shape());
  const int c = t.channels(), h = t.height(), w = t.width();
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(k, y, x) = t(k, h - 1 - y, x);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  scene.validate();
  if (steps < 0 || batch < 1) throw ValidationError("train: steps must be >= 0 and batch >= 1");
  if (!(lr > 0)) throw ValidationError("train: lr must be > 0");
  if (crop_h % 32 || crop_w % 32 || crop_h < 32 || crop_w < 32)
    throw ValidationError("train: crop size must be a positive multiple of 32");
  if (crop_h > scene.image_h || crop_w > scene.image_w) throw ValidationError("train: crop larger than scene");
  if (train_scenes < 1) throw ValidationError("train: need at least one training scene");
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  for (const auto &[k, v] : scene.to_key_values())
    if (k != "seed") kv["scene." + k] = v;
  kv["loss.lam_d4"] = num(weights.lam_d4);
  kv["loss.lam_o"] = num(weights.lam_o);
  kv["loss.lam_d1"] = num(weights.lam_d1);
  kv["loss.lam_o1"] = num(weights.lam_o1);
  kv["loss.lam_d"] = num(weights.lam_d);
  kv["loss.gamma_d"] = num(weights.gamma_d);
  kv["loss.gamma_o"] = num(weights.gamma_o);
  kv["train.scenes"] = std::to_string(train_scenes);
  kv["train.val_scenes"] = std::to_string(val_scenes);
  kv["train.steps"] = std::to_string(steps);
  kv["train.batch"] = std::to_string(batch);
  kv["train.lr"] = num(lr);
  kv["train.lr_final"] = num(lr_final);
  kv["train.beta1"] = num(beta1);
  kv["train.beta2"] = num(beta2);
  kv["train.adam_eps"] = num(adam_eps);
  kv["train.grad_clip"] = num(grad_clip);
  kv["train.crop_h"] = std::to_string(crop_h);
  kv["train.crop_w"] = std::to_string(crop_w);
  kv["train.augment"] = augment ? "true" : "false";
  kv["train.jitter"] = num(jitter);
  kv["train.vflip_prob"] = num(vflip_prob);
  kv["train.val_every"] = std::to_string(val_every);
  kv["train.checkpoint_every"] = std::to_string(checkpoint_every);
  kv["train.log_every"] = std::to_string(log_every);
  kv["train.seed"] = std::to_string(seed);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues &kv) {
  TrainConfig c;
  KeyValues model_kv, scene_kv;
  for (const auto &[k, v] : kv) {
    if (k.rfind("model.", 0) == 0) model_kv[k] = v;
    else if (k.rfind("scene.", 0) == 0) scene_kv[k.substr(6)] = v;
    else if (k.rfind("loss.", 0) != 0 && k.rfind("train.", 0) != 0)
      throw ValidationError("unknown config key '" + k + "'");
  }
  c.model = ModelConfig::from_key_values(model_kv);
  if (!scene_kv.empty()) c.scene = SceneSpec::from_key_values(scene_kv);
  c.weights.lam_d4 = kv_double(kv, "loss.lam_d4", c.weights.lam_d4);
  c.weights.lam_o = kv_double(kv, "loss.lam_o", c.weights.lam_o);
  c.weights.lam_d1 = kv_double(kv, "loss.lam_d1", c.weights.lam_d1);
  c.weights.lam_o1 = kv_double(kv, "loss.lam_o1", c.weights.lam_o1);
  c.weights.lam_d = kv_double(kv, "loss.lam_d", c.weights.lam_d);
  c.weights.gamma_d = kv_double(kv, "loss.gamma_d", c.weights.gamma_d);
  c.weights.gamma_o = kv_double(kv, "loss.gamma_o", c.weights.gamma_o);
  c.train_scenes = kv_int(kv, "train.scenes", c.train_scenes);
  c.val_scenes = kv_int(kv, "train.val_scenes", c.val_scenes);
  c.steps = kv_int(kv, "train.steps", c.steps);
  c.batch = kv_int(kv, "train.batch", c.batch);
  c.lr = kv_double(kv, "train.lr", c.lr);
  c.lr_final = kv_double(kv, "train.lr_final", c.lr_final);
  c.beta1 = kv_double(kv, "train.beta1", c.beta1);
  c.beta2 = kv_double(kv, "train.beta2", c.beta2);
  c.adam_eps = kv_double(kv, "train.adam_eps", c.adam_eps);
  c.grad_clip = kv_double(kv, "train.grad_clip", c.grad_clip);
  c.crop_h = kv_int(kv, "train.crop_h", c.crop_h);
  c.crop_w = kv_int(kv, "train.crop_w", c.crop_w);
  c.augment = kv_bool(kv, "train.augment", c.augment);
  c.jitter = kv_double(kv, "train.jitter", c.jitter);
  c.vflip_prob = kv_double(kv, "train.vflip_prob", c.vflip_prob);
  c.val_every = kv_int(kv, "train.val_every", c.val_every);
  c.checkpoint_every = kv_int(kv, "train.checkpoint_every", c.checkpoint_every);
  c.log_every = kv_int(kv, "train.log_every", c.log_every);
  c.seed = static_cast<std::uint64_t>(kv_int(kv, "train.seed", static_cast<int>(c.seed)));
  c.validate();
  return c;
}

void Adam::step(ParamStore<float> &params) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
  for (const auto &name : params.names()) {
    Var<float> &p = params.get(name);
    const Tensor<float> &g = p.grad();
    if (g.empty()) continue;
    auto &m = m_[name];
    auto &v = v_[name];
    if (m.empty()) {
      m = Tensor<float>(g.shape());
      v = Tensor<float>(g.shape());
    }
    Tensor<float> &val = p.mutable_value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = static_cast<float>(b1_ * m[i] + (1 - b1_) * g[i]);
      v[i] = static_cast<float>(b2_ * v[i] + (1 - b2_) * double(g[i]) * g[i]);
      val[i] -= static_cast<float>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

TrainSample augment_sample(const TrainSample &s, const TrainConfig &cfg, std::mt19937_64 &rng) {
  const int h = s.left.height(), w = s.left.width();
  if (cfg.crop_h > h || cfg.crop_w > w) throw ValidationError("augment_sample: crop larger than sample");
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const int r0 = std::uniform_int_distribution<int>(0, h - cfg.crop_h)(rng);
  const int c0 = std::uniform_int_distribution<int>(0, w - cfg.crop_w)(rng);
  TrainSample out;
  out.left = crop(s.left, r0, c0, cfg.crop_h, cfg.crop_w);
  out.right = crop(s.right, r0, c0, cfg.crop_h, cfg.crop_w);
  out.disp_left = DisparityMap(crop(s.disp_left.values, r0, c0, cfg.crop_h, cfg.crop_w), 0);
  out.disp_right = DisparityMap(crop(s.disp_right.values, r0, c0, cfg.crop_h, cfg.crop_w), 0);
  out.occlusion = OcclusionField(crop(s.occlusion.scores, r0, c0, cfg.crop_h, cfg.crop_w), 0);
  if (!cfg.augment) return out;

  const double j = cfg.jitter;
  const double gain = uni(1 - j, 1 + j), bias = uni(-j / 2, j / 2);
  std::array<double, 3> tint{uni(1 - j / 2, 1 + j / 2), uni(1 - j / 2, 1 + j / 2), uni(1 - j / 2, 1 + j / 2)};
  const double right_gain = uni(1 - j / 4, 1 + j / 4);
  for (int view = 0; view < 2; ++view) {
    ImageField &img = view == 0 ? out.left : out.right;
    const double g = gain * (view == 1 ? right_gain : 1.0);
    for (int c = 0; c < 3; ++c) {
      float *p = img.channel_ptr(c);
      for (std::size_t i = 0; i < img.plane(); ++i)
        p[i] = static_cast<float>(std::clamp(p[i] * g * tint[static_cast<std::size_t>(c)] + bias, 0.0, 1.0));
    }
  }
  if (uni(0, 1) < cfg.vflip_prob) {
    out.left = flip_rows(out.left);
    out.right = flip_rows(out.right);
    out.disp_left.values = flip_rows(out.disp_left.values);
    out.disp_right.values = flip_rows(out.disp_right.values);
    out.occlusion.scores = flip_rows(out.occlusion.scores);
  }
  return out;
}

template <typename T>
LossResult<T> accumulate_gradients(StereoModel<T> &model, const TrainSample &sample, const LossWeights &w, int iters,
                                   T scale) {
  Var<T> left(sample.left.template cast<T>()), right(sample.right.template cast<T>());
  Phase1Output<T> out = model.forward_phase1(left, right, iters);
  LossTargets<T> targets =
      make_loss_targets(sample.disp_left.values.template cast<T>(), sample.occlusion.scores.template cast<T>());
  LossResult<T> loss = total_loss(out, targets, w, iters);
  Tensor<T> seed = Tensor<T>::scalar(scale);
  loss.total.backward(&seed);
  return loss;
}

double mean_nonoccluded_epe(const StereoModel<float> &model, const Dataset &ds, int iters) {
  NoGradGuard guard;
  double sum = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    TrainSample s = ds[i];
    Phase1Output<float> out = model.forward_phase1(Var<float>(s.left), Var<float>(s.right), iters);
    Tensor<float> occ = s.occlusion.mask();
    const Tensor<float> &p = out.disparity.value();
    double e = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (occ[k] != 0.0f) continue;
      e += std::abs(double(p[k]) - s.disp_left.values[k]);
      ++n;
    }
    sum += n ? e / static_cast<double>(n) : 0.0;
  }
  return ds.size() ? sum / static_cast<double>(ds.size()) : 0.0;
}

MetricsLog::MetricsLog(std::string path) : path_(std::move(path)) {
  bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot open metrics log: " + path_);
  if (fresh) out << header() << "\n";
}

std::string MetricsLog::header() { return "step,total,term1,term2,term3,term4,term5,val_epe,wall_s"; }

std::string MetricsLog::format(const TrainLogRow &row) {
  std::ostringstream s;
  s.precision(9);
  s << row.step << "," << row.total;
  for (double t : row.terms) s << "," << t;
  s << ",";
  if (row.val_epe >= 0) s << row.val_epe;
  s.precision(4);
  s << "," << std::fixed << row.wall_s;
  return s.str();
}

void MetricsLog::append(const TrainLogRow &row) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw ValidationError("cannot append to metrics log: " + path_);
  out << format(row) << "\n";
}

TrainResult train_loop(StereoModel<float> &model, const Dataset &train, const Dataset *val, const TrainConfig &cfg,
                       const TrainProgress &progress) {
  cfg.weights.validate();
  if (cfg.steps < 0 || cfg.batch < 1) throw ValidationError("train_loop: steps must be >= 0 and batch >= 1");
  if (train.size() == 0) throw ValidationError("train_loop: empty training set");
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::optional<TrainSample>> cache(train.size());
  std::optional<MetricsLog> log;
  std::string ckpt_path;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log.emplace(cfg.out_dir + "/metrics.csv");
    ckpt_path = cfg.out_dir + "/model.ckpt";
  }
  auto save = [&](int step) {
    if (ckpt_path.empty()) return;
    save_checkpoint(ckpt_path, model.config(), model.params(),
                    {{"step", std::to_string(step)}, {"seed", std::to_string(cfg.seed)}});
  };
  const int iters = model.config().rru_iters_train;

  TrainResult result;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (cfg.lr_final >= 0 && cfg.steps > 1) {
      double t = double(step - 1) / double(cfg.steps - 1);
      adam.set_lr(cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + std::cos(std::numbers::pi * t)));
    }
    model.params().zero_grad();
    TrainLogRow row;
    row.step = step;
    for (int b = 0; b < cfg.batch; ++b) {
      std::size_t idx = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
      if (!cache[idx]) cache[idx] = train[idx];
      TrainSample s = augment_sample(*cache[idx], cfg, rng);
      LossResult<float> loss = accumulate_gradients(model, s, cfg.weights, iters, 1.0f / float(cfg.batch));
      row.total += loss.total.value()[0] / cfg.batch;
      for (int k = 0; k < 5; ++k) row.terms[static_cast<std::size_t>(k)] += loss.terms[static_cast<std::size_t>(k)] / cfg.batch;
    }
    if (cfg.grad_clip > 0) {
      double sq = 0;
      for (const auto &name : model.params().names())
        for (float g : model.params().get(name).grad().data()) sq += double(g) * g;
      double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        auto f = static_cast<float>(cfg.grad_clip / norm);
        for (const auto &name : model.params().names()) {
          auto &g = model.params().get(name).node()->grad;
          for (float &v : g.data()) v *= f;
        }
      }
    }
    adam.step(model.params());
    if (val && val->size() && ((cfg.val_every > 0 && step % cfg.val_every == 0) || step == cfg.steps)) {
      row.val_epe = mean_nonoccluded_epe(model, *val, iters);
      result.final_val_epe = row.val_epe;
    }
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.rows.push_back(row);
    if (log && (row.val_epe >= 0 || cfg.log_every <= 1 || step % cfg.log_every == 0 || step == cfg.steps))
      log->append(row);
    if (progress) progress(row);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save(step);
  }
  save(cfg.steps);
  return result;
}

template LossResult<float> accumulate_gradients(StereoModel<float> &, const TrainSample &, const LossWeights &, int,
                                                float);
template LossResult<double> accumulate_gradients(StereoModel<double> &, const TrainSample &, const LossWeights &, int,
                                                 double);

}  // namespace orstereo
