#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "orstereo/checkpoint.hpp"
#include "orstereo/metrics.hpp"
#include "orstereo/pipeline.hpp"
#include "orstereo/synthdata.hpp"

namespace orstereo {

/// Dataset directory layout written by `datagen` and read by `eval`/`ablate`:
///
///   <dir>/manifest.txt              one SceneSpec line per scene
///   <dir>/<scene>/left.png, right.png
///   <dir>/<scene>/disp_left.pfm, disp_right.pfm
///   <dir>/<scene>/occlusion.png     255 = occluded in the left view
///
/// Prediction directories hold <dir>/<scene>/disparity.pfm and occlusion.png.
std::string scene_name(std::size_t index);
void write_dataset(const std::string &dir, const std::vector<SceneSpec> &specs, int workers = 1);

struct StoredScene {
  std::string name;
  ImageField left, right;
  DisparityMap disparity;
  OcclusionField occlusion;
};
std::vector<StoredScene> read_dataset(const std::string &dir);
void write_prediction(const std::string &dir, const DisparityMap &disp, const OcclusionField &occ);

struct AblationVariant {
  std::string name;
  int iterations = 10;
  bool occlusion_path = true;
  bool nlr = true;
  StopRule stop_rule = StopRule::Fixed;
};

/// Full factorial grid: iterations {1,4,10,15,20} x occlusion path x NLR x stop rule.
std::vector<AblationVariant> ablation_grid();
std::string variant_name(const AblationVariant &v);

/// Two-phase inference of the variant on every scene, `workers` scenes at a time.
MetricReport evaluate_variant(const Checkpoint &ckpt, const std::vector<StoredScene> &scenes,
                              const AblationVariant &variant, const InferenceConfig &base, int workers);

/// Command-line entry point. Returns 0 on success, 1 on validation errors, 2 on numeric-health aborts.
int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

}  // namespace orstereo
