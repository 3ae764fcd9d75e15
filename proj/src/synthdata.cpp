#include "orstereo/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace orstereo {
namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ull +
                                       static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

double value_noise(std::uint64_t seed, double u, double v) {
  double fu = std::floor(u), fv = std::floor(v);
  auto ix = static_cast<std::int64_t>(fu), iy = static_cast<std::int64_t>(fv);
  double tu = fade(u - fu), tv = fade(v - fv);
  double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a + (b - a) * tu) * (1 - tv) + (c + (d - c) * tu) * tv;
}

struct Layer {
  // Region in left-image coordinates.
  bool background = false;
  bool ellipse = true;
  double cx = 0, cy = 0, hx = 1, hy = 1, angle = 0;
  // Disparity plane d(x, y) = base + sx (x - cx) + sy (y - cy).
  double base = 0, sx = 0, sy = 0;
  // Appearance.
  std::uint64_t tex_seed = 0;
  double contrast = 1, offset_u = 0, offset_v = 0;
  std::array<double, 3> tint{1, 1, 1};

  double disparity(double x, double y) const { return base + sx * (x - cx) + sy * (y - cy); }

  bool contains(double x, double y) const {
    if (background) return true;
    double dx = x - cx, dy = y - cy;
    double ca = std::cos(angle), sa = std::sin(angle);
    double u = (ca * dx + sa * dy) / hx, v = (-sa * dx + ca * dy) / hy;
    return ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
  }

  // Left-image x of the surface point seen at right-image (xr, y).
  double left_x_from_right(double xr, double y) const {
    return (xr + base - sx * cx + sy * (y - cy)) / (1.0 - sx);
  }
};

constexpr double kDepthBias = 1.0;  // disparity pixels
constexpr double kFootprintShare = 0.1;  // bilinear weight on foreign samples that marks a pixel occluded

struct Hit {
  int layer = -1;
  double disparity = -1e300;
};

Hit front_left(const std::vector<Layer> &layers, double x, double y) {
  Hit h;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].contains(x, y)) continue;
    double d = layers[i].disparity(x, y);
    if (d > h.disparity) h = {static_cast<int>(i), d};
  }
  return h;
}

// Front-most surface at right-image position (xr, y); returns the left-x in `xl`.
Hit front_right(const std::vector<Layer> &layers, double xr, double y, double *xl) {
  Hit h;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    double x = layers[i].left_x_from_right(xr, y);
    if (!layers[i].contains(x, y)) continue;
    double d = layers[i].disparity(x, y);
    if (d > h.disparity) {
      h = {static_cast<int>(i), d};
      if (xl) *xl = x;
    }
  }
  return h;
}

std::array<float, 3> shade(const Layer &l, const TextureSpec &tex, double x, double y) {
  double sum = 0, norm = 0, amp = 1, cell = tex.base_cell;
  for (int o = 0; o < tex.octaves; ++o) {
    sum += amp * value_noise(l.tex_seed + static_cast<std::uint64_t>(o) * 7919u, (x + l.offset_u) / cell,
                             (y + l.offset_v) / cell);
    norm += amp;
    amp *= tex.persistence;
    cell *= 0.5;
  }
  double t = sum / norm - 0.5;
  double lum = 0.5 + 1.8 * l.contrast * tex.contrast * t;
  std::array<float, 3> rgb{};
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(std::clamp(0.1 + 0.8 * lum * l.tint[c], 0.0, 1.0));
  return rgb;
}

// Shrink slopes until the plane stays inside [lo, hi] over the box, then clamp the base.
void fit_plane(Layer &l, double x0, double x1, double y0, double y1, double lo, double hi) {
  l.base = std::clamp(l.base, lo, hi);
  for (int it = 0; it < 64; ++it) {
    double mn = 1e300, mx = -1e300;
    for (double x : {x0, x1})
      for (double y : {y0, y1}) {
        double d = l.disparity(x, y);
        mn = std::min(mn, d);
        mx = std::max(mx, d);
      }
    if (mn >= lo && mx <= hi) return;
    l.sx *= 0.5;
    l.sy *= 0.5;
  }
  l.sx = l.sy = 0;
}

}  // namespace

void SceneSpec::validate() const {
  if (image_h < 1 || image_w < 1) throw ValidationError("SceneSpec: image size must be positive");
  if (n_layers < 1) throw ValidationError("SceneSpec: n_layers must be >= 1");
  if (!(d_min >= 0 && d_min < d_max && d_max < image_w))
    throw ValidationError("SceneSpec: need 0 <= d_min < d_max < image_w");
  if (!(max_slant >= 0 && max_slant < 0.5)) throw ValidationError("SceneSpec: max_slant must be in [0, 0.5)");
  if (texture.octaves < 1 || texture.base_cell <= 0) throw ValidationError("SceneSpec: bad texture parameters");
}

KeyValues SceneSpec::to_key_values() const {
  auto num = [](double v) { return format_double(v); };
  return {{"seed", std::to_string(seed)},
          {"h", std::to_string(image_h)},
          {"w", std::to_string(image_w)},
          {"layers", std::to_string(n_layers)},
          {"dmin", num(d_min)},
          {"dmax", num(d_max)},
          {"slant", num(max_slant)},
          {"octaves", std::to_string(texture.octaves)},
          {"cell", num(texture.base_cell)},
          {"persistence", num(texture.persistence)},
          {"contrast", num(texture.contrast)},
          {"lowtex", num(texture.low_texture_prob)}};
}

SceneSpec SceneSpec::from_key_values(const KeyValues &kv) {
  SceneSpec s;
  auto it = kv.find("seed");
  if (it != kv.end()) {
    try {
      s.seed = std::stoull(it->second);
    } catch (const std::exception &) {
      throw ValidationError("scene spec: bad seed '" + it->second + "'");
    }
  }
  s.image_h = kv_int(kv, "h", s.image_h);
  s.image_w = kv_int(kv, "w", s.image_w);
  s.n_layers = kv_int(kv, "layers", s.n_layers);
  s.d_min = kv_double(kv, "dmin", s.d_min);
  s.d_max = kv_double(kv, "dmax", s.d_max);
  s.max_slant = kv_double(kv, "slant", s.max_slant);
  s.texture.octaves = kv_int(kv, "octaves", s.texture.octaves);
  s.texture.base_cell = kv_double(kv, "cell", s.texture.base_cell);
  s.texture.persistence = kv_double(kv, "persistence", s.texture.persistence);
  s.texture.contrast = kv_double(kv, "contrast", s.texture.contrast);
  s.texture.low_texture_prob = kv_double(kv, "lowtex", s.texture.low_texture_prob);
  s.validate();
  return s;
}

std::string SceneSpec::to_line() const {
  std::string line;
  for (const auto &[k, v] : to_key_values()) line += (line.empty() ? "" : " ") + k + "=" + v;
  return line;
}

SceneSpec SceneSpec::from_line(const std::string &line) {
  KeyValues kv;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("scene spec: expected key=value, got '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return from_key_values(kv);
}

TrainSample generate_scene(const SceneSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(mix64(spec.seed));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const int h = spec.image_h, w = spec.image_w;
  const double lo = spec.d_min, hi = spec.d_max, span = hi - lo;

  std::vector<Layer> layers(static_cast<std::size_t>(spec.n_layers));
  std::vector<double> bases;
  for (int i = 0; i < spec.n_layers; ++i) bases.push_back(uni(lo, hi));
  std::sort(bases.begin(), bases.end());
  for (int i = 0; i < spec.n_layers; ++i) {
    Layer &l = layers[static_cast<std::size_t>(i)];
    l.background = (i == 0);
    l.ellipse = uni(0, 1) < 0.5;
    l.cx = uni(0, w - 1);
    l.cy = uni(0, h - 1);
    l.hx = uni(0.08, 0.3) * w;
    l.hy = uni(0.15, 0.45) * h;
    l.angle = uni(-0.6, 0.6);
    l.base = i == 0 ? lo + uni(0, 0.4) * span : bases[static_cast<std::size_t>(i)];
    l.sx = uni(-spec.max_slant, spec.max_slant);
    l.sy = uni(-spec.max_slant, spec.max_slant);
    l.tex_seed = mix64(spec.seed * 131u + static_cast<std::uint64_t>(i) + 1);
    l.offset_u = uni(0, 1000);
    l.offset_v = uni(0, 1000);
    l.contrast = uni(0, 1) < spec.texture.low_texture_prob ? 0.15 : uni(0.7, 1.2);
    for (auto &t : l.tint) t = uni(0.6, 1.1);
    if (l.background) {
      l.cx = 0.5 * (w - 1);
      l.cy = 0.5 * (h - 1);
      fit_plane(l, 0, w - 1 + hi, 0, h - 1, lo, hi);
    } else {
      double r = std::max(l.hx, l.hy);
      fit_plane(l, l.cx - r, l.cx + r, l.cy - r, l.cy + r, lo, hi);
    }
  }

  TrainSample s;
  s.left = ImageField(3, h, w);
  s.right = ImageField(3, h, w);
  Tensor<float> dl(1, h, w), dr(1, h, w), occ(1, h, w);
  std::vector<int> visible(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Hit hit = front_left(layers, x, y);
      const Layer &l = layers[static_cast<std::size_t>(hit.layer)];
      auto rgb = shade(l, spec.texture, x, y);
      for (int c = 0; c < 3; ++c) s.left(c, y, x) = rgb[c];
      dl(0, y, x) = static_cast<float>(hit.disparity);
      visible[static_cast<std::size_t>(y) * w + x] = hit.layer;

      double xl = 0;
      Hit rh = front_right(layers, x, y, &xl);
      const Layer &lr = layers[static_cast<std::size_t>(rh.layer)];
      auto rgb_r = shade(lr, spec.texture, xl, y);
      for (int c = 0; c < 3; ++c) s.right(c, y, x) = rgb_r[c];
      dr(0, y, x) = static_cast<float>(rh.disparity);
    }
  // Visibility: forward-project each left pixel into the right view and z-test it against the surfaces
  // rendered at the grid samples bracketing the landing point.
  std::vector<Hit> right_hit(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) right_hit[static_cast<std::size_t>(y) * w + x] = front_right(layers, x, y, nullptr);
  // A sample passes if the right view shows the same surface there, or one within the depth bias of it.
  auto passes = [&](int own, int xs, int y) {
    const Hit &rh = right_hit[static_cast<std::size_t>(y) * w + xs];
    if (rh.layer == own) return true;
    double xl = layers[static_cast<std::size_t>(own)].left_x_from_right(xs, y);
    return std::abs(rh.disparity - layers[static_cast<std::size_t>(own)].disparity(xl, y)) <= kDepthBias;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double xr = x - static_cast<double>(dl(0, y, x));
      bool occluded = true;
      if (xr >= 0.0 && xr <= w - 1) {
        int own = visible[static_cast<std::size_t>(y) * w + x];
        int x0 = static_cast<int>(std::floor(xr)), x1 = static_cast<int>(std::ceil(xr));
        double f = xr - x0;
        double foreign = (passes(own, x0, y) ? 0.0 : 1.0 - f) + (x1 != x0 && !passes(own, x1, y) ? f : 0.0);
        occluded = foreign > kFootprintShare;
      }
      occ(0, y, x) = occluded ? 1.0f : 0.0f;
    }
  for (float v : dl.data())
    if (v < lo - 1e-4 || v > hi + 1e-4) throw ValidationError("generate_scene: layer disparity outside range");
  s.disp_left = DisparityMap(std::move(dl), 0);
  s.disp_right = DisparityMap(std::move(dr), 0);
  s.occlusion = OcclusionField::from_mask(occ, 0);
  return s;
}

double occlusion_agreement(const OcclusionField &a, const OcclusionField &b) {
  Tensor<float> ma = a.mask(), mb = b.mask();
  if (ma.shape() != mb.shape()) throw ShapeError("occlusion_agreement: shape mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) same += ma[i] == mb[i];
  return static_cast<double>(same) / static_cast<double>(ma.size());
}

Split parse_split(const std::string &name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
}

const char *split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::uint64_t split_seed(Split split, int index) {
  if (index < 0 || index >= 1000000) throw ValidationError("split index out of range");
  return static_cast<std::uint64_t>(split) * 1000000u + static_cast<std::uint64_t>(index);
}

std::vector<SceneSpec> make_split_specs(Split split, int count, const SceneSpec &base) {
  std::vector<SceneSpec> specs;
  for (int i = 0; i < count; ++i) {
    SceneSpec s = base;
    s.seed = split_seed(split, i);
    specs.push_back(s);
  }
  return specs;
}

std::vector<SceneSpec> read_manifest(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest: " + path);
  std::vector<SceneSpec> specs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      specs.push_back(SceneSpec::from_line(line));
    } catch (const ValidationError &e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return specs;
}

void write_manifest(const std::string &path, const std::vector<SceneSpec> &specs) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write manifest: " + path);
  for (const auto &s : specs) out << s.to_line() << "\n";
}

}  // namespace orstereo
