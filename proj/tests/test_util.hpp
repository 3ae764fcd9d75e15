#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "orstereo/tensor.hpp"

namespace testutil {

template <typename T>
orstereo::Tensor<T> random_tensor(orstereo::Shape shape, double lo, double hi, std::uint64_t seed) {
  orstereo::Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (T &v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// Copy of the elements; safe to iterate when the tensor is a temporary.
template <typename T>
std::vector<T> elements(const orstereo::Tensor<T> &t) {
  return {t.data().begin(), t.data().end()};
}

inline orstereo::Tensor<float> random_image(int h, int w, std::uint64_t seed) {
  return random_tensor<float>({3, h, w}, 0, 1, seed);
}

inline std::string temp_path(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() / "orstereo_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

inline void write_text(const std::string &path, const std::string &bytes) {
  std::ofstream(path, std::ios::binary) << bytes;
}

inline std::string read_text(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testutil
