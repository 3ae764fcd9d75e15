#pragma once

#include <array>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "orstereo/config_file.hpp"
#include "orstereo/losses.hpp"
#include "orstereo/network.hpp"
#include "orstereo/synthdata.hpp"

namespace orstereo {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  SceneSpec scene;          // template for generated training/validation scenes
  int train_scenes = 200;
  int val_scenes = 8;
  int steps = 1000;
  int batch = 1;            // samples whose gradients are averaged per update
  double lr = 1e-4;
  double lr_final = -1;     // < 0 keeps lr constant; otherwise cosine decay to this value
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 0;     // global gradient-norm clip; 0 disables
  int crop_h = 64, crop_w = 128;
  bool augment = true;
  double jitter = 0.1;      // photometric gain/bias magnitude
  double vflip_prob = 0.5;
  int val_every = 100;      // 0 disables periodic validation
  int checkpoint_every = 0; // 0 writes only the final checkpoint
  int log_every = 10;
  std::uint64_t seed = 0;
  std::string out_dir;      // empty: no files written

  void validate() const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues &kv);
};

/// Per-parameter first/second moment estimates.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void set_lr(double lr) { lr_ = lr; }
  void step(ParamStore<float> &params);
  int steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::map<std::string, Tensor<float>> m_, v_;
};

/// Random crop, photometric jitter and vertical flip.
TrainSample augment_sample(const TrainSample &s, const TrainConfig &cfg, std::mt19937_64 &rng);

/// Forward + backward on one sample; gradients are added into the parameters scaled by `scale`.
template <typename T>
LossResult<T> accumulate_gradients(StereoModel<T> &model, const TrainSample &sample, const LossWeights &w, int iters,
                                   T scale = T(1));

/// Mean non-occluded EPE of the final disparity over a dataset.
double mean_nonoccluded_epe(const StereoModel<float> &model, const Dataset &ds, int iters);

struct TrainLogRow {
  int step = 0;
  double total = 0;
  std::array<double, 5> terms{};
  double val_epe = -1;  // < 0 when not evaluated at this step
  double wall_s = 0;
};

/// Append-only CSV with header "step,total,term1,term2,term3,term4,term5,val_epe,wall_s".
class MetricsLog {
 public:
  explicit MetricsLog(std::string path);
  void append(const TrainLogRow &row);
  static std::string header();
  static std::string format(const TrainLogRow &row);

 private:
  std::string path_;
};

struct TrainResult {
  std::vector<TrainLogRow> rows;  // every step
  double final_val_epe = -1;
};

using TrainProgress = std::function<void(const TrainLogRow &)>;

/// Optimizes `model` in place. Writes `<out_dir>/metrics.csv` and `<out_dir>/model.ckpt` when out_dir is set.
TrainResult train_loop(StereoModel<float> &model, const Dataset &train, const Dataset *val, const TrainConfig &cfg,
                       const TrainProgress &progress = {});

}  // namespace orstereo
