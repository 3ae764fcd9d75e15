#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orstereo/config_file.hpp"
#include "orstereo/geometry.hpp"

namespace orstereo {

struct TextureSpec {
  int octaves = 4;
  double base_cell = 24.0;   // lattice spacing of the coarsest octave, pixels
  double persistence = 0.6;  // amplitude ratio between octaves
  double contrast = 1.0;
  double low_texture_prob = 0.15;  // chance a layer gets strongly reduced contrast
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int image_h = 64;
  int image_w = 128;
  int n_layers = 4;
  double d_min = 0.0;
  double d_max = 24.0;
  double max_slant = 0.08;  // |d disparity / d x| and |d disparity / d y| bound
  TextureSpec texture;

  void validate() const;
  KeyValues to_key_values() const;
  static SceneSpec from_key_values(const KeyValues &kv);
  std::string to_line() const;
  static SceneSpec from_line(const std::string &line);
};

struct TrainSample {
  ImageField left, right;
  DisparityMap disp_left, disp_right;
  OcclusionField occlusion;  // hard labels from the renderer's visibility test
};

/// Layered planar scene rendered into both views from the same geometry.
TrainSample generate_scene(const SceneSpec &spec);

/// Fraction of pixels on which two hard occlusion labelings agree.
double occlusion_agreement(const OcclusionField &a, const OcclusionField &b);

enum class Split { Train, Val, Test };
Split parse_split(const std::string &name);
const char *split_name(Split s);
/// Seeds for a split are drawn from disjoint ranges: train [0, 1e6), val [1e6, 2e6), test [2e6, 3e6).
std::uint64_t split_seed(Split split, int index);
std::vector<SceneSpec> make_split_specs(Split split, int count, const SceneSpec &base);

/// Lazily generated, deterministic sequence of samples.
class Dataset {
 public:
  explicit Dataset(std::vector<SceneSpec> specs) : specs_(std::move(specs)) {}
  std::size_t size() const { return specs_.size(); }
  const SceneSpec &spec(std::size_t i) const { return specs_.at(i); }
  TrainSample operator[](std::size_t i) const { return generate_scene(specs_.at(i)); }

  class iterator {
   public:
    iterator(const Dataset *ds, std::size_t i) : ds_(ds), i_(i) {}
    TrainSample operator*() const { return (*ds_)[i_]; }
    iterator &operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator &o) const { return i_ == o.i_; }

   private:
    const Dataset *ds_;
    std::size_t i_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, specs_.size()}; }

 private:
  std::vector<SceneSpec> specs_;
};

std::vector<SceneSpec> read_manifest(const std::string &path);
void write_manifest(const std::string &path, const std::vector<SceneSpec> &specs);

/// Raised for malformed files; carries the byte offset where parsing failed.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string &what, std::size_t offset)
      : ValidationError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Grayscale PFM ("Pf"), rows bottom-to-top; negative scale = little-endian.
void write_pfm(const std::string &path, const DisparityMap &d, bool little_endian = true);
std::string encode_pfm(const DisparityMap &d, bool little_endian = true);
DisparityMap read_pfm(const std::string &path);
DisparityMap decode_pfm(const std::string &bytes);

/// 8-bit RGB PNG from a 3 x H x W field in [0, 1] (values clamped).
void write_png_rgb(const std::string &path, const ImageField &image);
/// 8-bit single-channel PNG from a 1 x H x W field in [0, 1].
void write_png_gray(const std::string &path, const Tensor<float> &image);
/// Reads 8-bit gray/RGB/RGBA PNG as a 3 x H x W field (gray replicated) scaled to [0, 1].
ImageField read_png_rgb(const std::string &path);
/// Reads a PNG as a 1 x H x W field in [0, 1] (first channel).
Tensor<float> read_png_gray(const std::string &path);

}  // namespace orstereo
