// Copyright 2026 The lamemo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LAMEMO_NUMERICS_TENSOR_HPP_
#define LAMEMO_NUMERICS_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lamemo/errors.hpp"

namespace lamemo {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major array with a recorded-gradient capability. Copies share
/// the underlying node (handle semantics, like a shared_ptr).
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    check_extents(shape);
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
    check_extents(shape);
    if (values.size() != shape_numel(shape))
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor from_node(std::shared_ptr<NodeT> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  std::size_t cols() const {
    return node_->shape.size() < 2 ? 1 : numel() / node_->shape[0];
  }

  std::span<const T> values() const { return node_->value; }
  // Direct mutation bypasses the graph; meant for parameters and leaves.
  std::span<T> mutable_values() { return node_->value; }
  T item() const {
    if (numel() != 1)
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator()(std::size_t i, std::size_t j) const {
    return node_->value[i * cols() + j];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Detached copy of the values (stop-gradient).
  Tensor detach() const { return Tensor(node_->shape, node_->value); }

  /// Reverse-mode sweep from a single-element tensor. Gradients accumulate
  /// additively into every reachable node that requires grad.
  void backward() const {
    if (numel() != 1)
      throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeT* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT* n = *it;
      if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
  }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  static void check_extents(const Shape& s) {
    for (auto e : s)
      if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(s));
  }

  std::shared_ptr<NodeT> node_;
};

/// Builds an op result. Parents are only retained (and `backward` only kept)
/// when recording is on and at least one parent requires grad.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents, Backward&& backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

/// Accumulation target for parent `i` of `self`, or nullptr when that parent
/// does not take gradients.
template <class T>
T* parent_grad(detail::Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer().data() : nullptr;
}

template <class T>
const T* parent_value(const detail::Node<T>& self, std::size_t i) {
  return self.parents[i]->value.data();
}

}  // namespace lamemo

#endif  // LAMEMO_NUMERICS_TENSOR_HPP_
