#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <cctype>

#include "orstereo/synthdata.hpp"

namespace orstereo {
namespace {

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("failed writing file: " + path);
}

// Reads one whitespace-delimited token starting at `pos`; the header allows one separator byte after each field.
std::string header_token(const std::string &bytes, std::size_t &pos) {
  while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw ParseError("PFM: unexpected end of header", start);
  return bytes.substr(start, pos - start);
}

int parse_dim(const std::string &tok, std::size_t offset) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("PFM: bad dimension '" + tok + "'", offset);
  long v = std::stol(tok);
  if (v < 1 || v > (1 << 20)) throw ParseError("PFM: dimension out of range '" + tok + "'", offset);
  return static_cast<int>(v);
}

void write_png(const std::string &path, int h, int w, int channels, const std::vector<unsigned char> &pixels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr))
    throw ValidationError("cannot write PNG " + path + ": " + img.message);
}

unsigned char to_byte(float v) {
  float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

// Returns an H x W x 3 interleaved RGB buffer; gray is replicated and alpha dropped.
std::vector<unsigned char> read_png_rgb8(const std::string &path, int &h, int &w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ValidationError("cannot read PNG " + path + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ValidationError("cannot decode PNG " + path + ": " + msg);
  }
  return buf;
}

}  // namespace

std::string encode_pfm(const DisparityMap &d, bool little_endian) {
  const Tensor<float> &v = d.values;
  const int h = v.height(), w = v.width();
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + (little_endian ? "-1.0" : "1.0") + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(h) * w * 4);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      auto u = std::bit_cast<std::uint32_t>(v(0, y, x));
      for (int i = 0; i < 4; ++i) {
        int shift = little_endian ? 8 * i : 8 * (3 - i);
        out.push_back(static_cast<char>((u >> shift) & 0xFFu));
      }
    }
  return out;
}

DisparityMap decode_pfm(const std::string &bytes) {
  std::size_t pos = 0;
  std::string magic = header_token(bytes, pos);
  if (magic == "PF") throw ParseError("PFM: colour PFM ('PF') not supported; expected 'Pf'", 0);
  if (magic != "Pf") throw ParseError("PFM: bad magic '" + magic + "'", 0);
  std::size_t at = pos;
  int w = parse_dim(header_token(bytes, pos), at);
  at = pos;
  int h = parse_dim(header_token(bytes, pos), at);
  at = pos;
  std::string scale_tok = header_token(bytes, pos);
  double scale = 0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception &) {
    throw ParseError("PFM: bad scale '" + scale_tok + "'", at);
  }
  if (scale == 0 || !std::isfinite(scale)) throw ParseError("PFM: scale must be non-zero", at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ParseError("PFM: missing separator after scale", pos);
  ++pos;
  const bool little = scale < 0;
  const std::size_t need = static_cast<std::size_t>(h) * w * 4;
  if (bytes.size() - pos < need)
    throw ParseError("PFM: truncated payload, need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - pos),
                     bytes.size());
  Tensor<float> v(1, h, w);
  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data()) + pos;
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x, p += 4) {
      std::uint32_t u = 0;
      for (int i = 0; i < 4; ++i) {
        int shift = little ? 8 * i : 8 * (3 - i);
        u |= static_cast<std::uint32_t>(p[i]) << shift;
      }
      v(0, y, x) = std::bit_cast<float>(u);
    }
  return DisparityMap(std::move(v), 0);
}

void write_pfm(const std::string &path, const DisparityMap &d, bool little_endian) {
  write_file(path, encode_pfm(d, little_endian));
}

DisparityMap read_pfm(const std::string &path) {
  try {
    return decode_pfm(read_file(path));
  } catch (const ParseError &e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

void write_png_rgb(const std::string &path, const ImageField &image) {
  if (image.channels() != 3) throw ShapeError("write_png_rgb: expected 3 channels, got " + shape_str(image.shape()));
  const int h = image.height(), w = image.width();
  std::vector<unsigned char> px(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image(c, y, x));
  write_png(path, h, w, 3, px);
}

void write_png_gray(const std::string &path, const Tensor<float> &image) {
  require_rank3(image, "write_png_gray");
  const int h = image.height(), w = image.width();
  std::vector<unsigned char> px(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) px[static_cast<std::size_t>(y) * w + x] = to_byte(image(0, y, x));
  write_png(path, h, w, 1, px);
}

ImageField read_png_rgb(const std::string &path) {
  int h = 0, w = 0;
  auto buf = read_png_rgb8(path, h, w);
  ImageField img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

Tensor<float> read_png_gray(const std::string &path) {
  int h = 0, w = 0;
  auto buf = read_png_rgb8(path, h, w);
  Tensor<float> img(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(0, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3] / 255.0f;
  return img;
}

}  // namespace orstereo
