#include "orstereo/params.hpp"

#include <cmath>
#include <stdexcept>

namespace orstereo {

template <typename T>
Var<T> &ParamStore<T>::add(const std::string &name, Tensor<T> init) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  index_[name] = vars_.size();
  order_.push_back(name);
  vars_.emplace_back(std::move(init), true);
  return vars_.back();
}

template <typename T>
Var<T> &ParamStore<T>::get(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return vars_[it->second];
}

template <typename T>
const Var<T> &ParamStore<T>::get(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return vars_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto &v : vars_) n += v.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto &v : vars_) v.zero_grad();
}

template <typename T>
Tensor<T> Initializer::conv_weight(int cout, int cin, int k, double gain) {
  Tensor<T> w(Shape{cout, cin, k, k});
  const double bound = gain * std::sqrt(6.0 / (cin * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto &v : w.data()) v = static_cast<T>(dist(rng_));
  return w;
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> Initializer::conv_weight<float>(int, int, int, double);
template Tensor<double> Initializer::conv_weight<double>(int, int, int, double);

}  // namespace orstereo
