#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "orstereo/network.hpp"

namespace orstereo {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-3;
  int full_limit = 48;      // groups up to this size are checked element by element
  int sampled_elements = 6; // elements probed in larger groups
  int directions = 2;       // random directional derivatives per group
  std::string fault_check;  // name of a check whose analytic gradient is scaled (harness self-test)
  double fault_scale = 1.1;
};

struct GradCheckEntry {
  std::string check;   // operation under test
  std::string group;   // input or parameter group
  int probes = 0;      // finite-difference probes compared
  int non_smooth = 0;  // probes discarded because the function has a kink within the step
  double max_rel_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 0;
  std::vector<GradCheckEntry> entries;
  double seconds = 0;

  bool passed() const;
  /// Max relative error per check, in first-seen order.
  std::vector<std::pair<std::string, double>> per_check() const;
  std::string to_text() const;
};

/// Leaf values perturbed in place; `eval` must rebuild the scalar from them on every call.
struct GradCheckGroup {
  std::string name;
  Var<double> leaf;
};

GradCheckEntry check_scalar_function(const std::string &check, const GradCheckGroup &group,
                                     const std::function<Var<double>()> &eval, const GradCheckOptions &opt,
                                     std::uint64_t seed, double analytic_scale = 1.0);

/// Finite-difference checks of every differentiable primitive and every network stage on `cfg`.
GradCheckReport gradcheck_suite(const ModelConfig &cfg, const GradCheckOptions &opt = {});

}  // namespace orstereo
