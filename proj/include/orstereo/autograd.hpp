#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "orstereo/tensor.hpp"

namespace orstereo {

/// Thread-local switch that stops graph recording. Forward passes under a guard keep no tape.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = previous_; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

  static bool &enabled() {
    thread_local bool grad_enabled = true;
    return grad_enabled;
  }

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;

  void accumulate(const Tensor<T> &g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    T *dst = grad.ptr();
    const T *src = g.ptr();
    for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += src[i];
  }

  // Gradient buffer of the right shape, zero-initialized on first use.
  Tensor<T> &grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a value in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T> &value() const { return node_->value; }
  Tensor<T> &mutable_value() { return node_->value; }
  const Tensor<T> &grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape &shape() const { return node_->value.shape(); }
  Node<T> *node() const { return node_.get(); }
  const std::shared_ptr<Node<T>> &node_ptr() const { return node_; }

  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Reverse sweep from this value. Non-scalar roots are seeded with `seed`, or ones.
  void backward(const Tensor<T> *seed = nullptr) const;

  /// Drop graph history, keeping the value.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Build the result of a differentiable op. When no parent requires a gradient (or recording is off)
/// the result is a constant and the backward closure is discarded.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T> &)> backward) {
  bool needs = false;
  if (NoGradGuard::enabled()) {
    for (const auto &p : parents) needs = needs || p.requires_grad();
  }
  Var<T> out(std::move(value), needs);
  if (needs) {
    Node<T> *n = out.node();
    n->parents.reserve(parents.size());
    for (auto &p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return out;
}

template <typename T>
void Var<T>::backward(const Tensor<T> *seed) const {
  if (!node_->requires_grad) return;
  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> seen;
  std::vector<std::pair<Node<T> *, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto &[n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T> *p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  if (seed) {
    if (seed->shape() != node_->value.shape()) throw ShapeError("backward: seed shape mismatch");
    node_->accumulate(*seed);
  } else {
    node_->accumulate(Tensor<T>(node_->value.shape(), T(1)));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> *n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace orstereo
