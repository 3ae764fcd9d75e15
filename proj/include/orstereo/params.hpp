#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "orstereo/autograd.hpp"

namespace orstereo {

/// Named learnable tensors in registration order.
template <typename T>
class ParamStore {
 public:
  Var<T> &add(const std::string &name, Tensor<T> init);
  Var<T> &get(const std::string &name);
  const Var<T> &get(const std::string &name) const;
  bool contains(const std::string &name) const { return index_.count(name) != 0; }

  const std::vector<std::string> &names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Deep copy with converted precision; the copy's leaves require gradients.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto &n : order_) out.add(n, get(n).value().template cast<U>());
    return out;
  }
  ParamStore clone() const { return cast<T>(); }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::size_t> index_;
  std::vector<Var<T>> vars_;
};

/// He-style uniform initialization helpers driven by one seeded engine.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  template <typename T>
  Tensor<T> conv_weight(int cout, int cin, int k, double gain = 1.0);
  template <typename T>
  Tensor<T> zeros(Shape shape) {
    return Tensor<T>(std::move(shape));
  }

 private:
  std::mt19937_64 rng_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace orstereo
