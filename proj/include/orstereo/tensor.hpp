#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace orstereo {

using Shape = std::vector<int>;

std::string shape_str(const Shape &shape);

/// Raised when tensor or field dimensions do not agree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for inputs that are well-formed in shape but violate a value precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a non-finite value shows up where the computation requires finite numbers.
class NumericHealthError : public std::runtime_error {
 public:
  NumericHealthError(const std::string &what, int iteration = -1)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Dense row-major tensor. Rank-3 tensors are C x H x W fields; weights use rank 4.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape_));
    }
    data_.assign(count(shape_), fill);
  }
  Tensor(int c, int h, int w, T fill = T(0)) : Tensor(Shape{c, h, w}, fill) {}

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape &shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  int channels() const { return shape_.at(0); }
  int height() const { return shape_.at(1); }
  int width() const { return shape_.at(2); }
  std::size_t plane() const { return static_cast<std::size_t>(height()) * width(); }

  T *ptr() { return data_.data(); }
  const T *ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T *channel_ptr(int c) { return data_.data() + c * plane(); }
  const T *channel_ptr(int c) const { return data_.data() + c * plane(); }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }
  T &operator()(int c, int y, int x) { return data_[(c * static_cast<std::size_t>(height()) + y) * width() + x]; }
  const T &operator()(int c, int y, int x) const {
    return data_[(c * static_cast<std::size_t>(height()) + y) * width() + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor &o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != data_.size()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool operator==(const Tensor &o) const { return shape_ == o.shape_ && data_ == o.data_; }

  static std::size_t count(const Shape &s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline std::string shape_str(const Shape &shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void require_rank3(const Tensor<T> &t, const char *what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected a CxHxW field, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_hw(const Tensor<T> &a, const Tensor<T> &b, const char *what) {
  require_rank3(a, what);
  require_rank3(b, what);
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError(std::string(what) + ": spatial size mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
T max_abs(const Tensor<T> &t) {
  T m = 0;
  for (T v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T max_abs_diff(const Tensor<T> &a, const Tensor<T> &b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace orstereo
