#pragma once

#include <string>

#include "orstereo/config_file.hpp"
#include "orstereo/network.hpp"

namespace orstereo {

/// Single-file checkpoint:
///
///   line 1: "ORSTEREO-CHECKPOINT 1"
///   line 2: "manifest-bytes <N>"
///   N bytes of manifest text, one entry per line:
///     "config <key>=<value>"   model configuration echo
///     "meta <key>=<value>"     free-form metadata (step, seed, ...)
///     "param <name> f32 <d0>x<d1>x... <offset> <nbytes>"
///   payload: raw little-endian IEEE-754 float32 values, row-major, at the stated byte
///   offsets measured from the first payload byte.
struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
  KeyValues meta;
};

void save_checkpoint(const std::string &path, const ModelConfig &config, const ParamStore<float> &params,
                     const KeyValues &meta = {});
Checkpoint load_checkpoint(const std::string &path);

}  // namespace orstereo
