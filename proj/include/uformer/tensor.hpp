// Copyright 2026 uformer authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a node holding shape, data and an optional
// gradient buffer. Operations executed while a Tape is recording append one
// entry per op whose output requires a gradient; Tape::backward replays the
// entries in reverse, accumulating into every reachable input.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "uformer/error.hpp"

namespace uformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Output of a recorded op (as opposed to a leaf).
  bool recorded = false;
  // Received gradient during the current backward pass.
  bool reached = false;

  T* grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    reached = true;
    return grad.data();
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    validate(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    validate(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError(detail::concat("tensor: shape ", detail::shape_str(shape),
                                          " does not match ", values.size(), " values"));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  T& at(std::initializer_list<std::size_t> index) { return node_->data[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const {
    return node_->data[offset(index)];
  }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("tensor: item() on tensor of shape " + detail::shape_str(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<T> grad() {
    if (!has_grad()) throw Error("tensor: gradient not populated");
    return node_->grad;
  }
  std::span<const T> grad() const {
    if (!has_grad()) throw Error("tensor: gradient not populated");
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  void clear_grad() { node_->grad.clear(); }

  // Deep copy of the values with no gradient history.
  Tensor clone() const { return Tensor(shape(), node_->data); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>(shape(), std::move(out));
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  Node& node() { return *node_; }
  const Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  static void validate(const Shape& shape) {
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor: zero extent in shape " + detail::shape_str(shape));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    assert(index.size() == dim());
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      assert(i < node_->shape[axis]);
      off = off * node_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  std::shared_ptr<Node> node_;
};

// Ordered record of executed differentiable ops. Single writer: one training
// step builds one tape and consumes it with backward().
template <typename T>
class Tape {
 public:
  using Node = detail::TensorNode<T>;
  using BackwardFn = std::function<void(const std::vector<T>& out_grad)>;

  struct Entry {
    const char* op;
    std::shared_ptr<Node> output;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
  };

  // Makes a tape the thread's active recorder for the guard's lifetime.
  class Recording {
   public:
    explicit Recording(Tape& tape) : previous_(current()) { current() = &tape; }
    ~Recording() { current() = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] Recording record() { return Recording(*this); }

  static Tape* active() { return current(); }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  void push(Entry entry) {
    entry.output->recorded = true;
    entries_.push_back(std::move(entry));
  }

  // Populates gradients of every requires_grad tensor reachable from loss.
  // Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw DimensionError("backward: loss must be a scalar, got shape " +
                           (loss.defined() ? detail::shape_str(loss.shape()) : std::string("<null>")));
    }
    Node* loss_node = const_cast<Node*>(&loss.node());
    if (!loss_node->recorded) {
      if (!loss_node->requires_grad) {
        throw Error("backward: loss is not reachable from any recorded operation");
      }
      loss_node->grad_buffer()[0] += T(1);
      return;
    }
    bool found = false;
    for (auto& e : entries_) {
      std::fill(e.output->grad.begin(), e.output->grad.end(), T(0));
      e.output->reached = false;
      found = found || e.output.get() == loss_node;
    }
    if (!found) throw Error("backward: loss was recorded on a different tape");
    loss_node->grad_buffer()[0] = T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->reached) continue;
      it->backward(it->output->grad);
    }
  }

 private:
  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

namespace detail {

// Gradient sink for an input, or nullptr when it does not take gradients.
template <typename T>
T* grad_sink(const Tensor<T>& t) {
  auto& node = const_cast<TensorNode<T>&>(t.node());
  return node.requires_grad ? node.grad_buffer() : nullptr;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

// Registers out as the result of op over inputs when a tape is recording and
// any input takes gradients. `fn` receives the output gradient.
template <typename T, typename Fn>
Tensor<T> record(const char* op, Tensor<T> out, std::initializer_list<Tensor<T>> inputs, Fn&& fn) {
#ifndef NDEBUG
  if (!all_finite(out)) {
    bool inputs_finite = true;
    for (const auto& in : inputs) inputs_finite = inputs_finite && all_finite(in);
    assert(!inputs_finite && "non-finite output from finite inputs");
  }
#endif
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  typename Tape<T>::Entry entry{op, out.node_ptr(), {}, std::forward<Fn>(fn)};
  for (const auto& in : inputs) entry.inputs.push_back(in.node_ptr());
  tape->push(std::move(entry));
  return out;
}

template <typename T, typename Fn>
Tensor<T> record(const char* op, Tensor<T> out, const std::vector<Tensor<T>>& inputs, Fn&& fn) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  typename Tape<T>::Entry entry{op, out.node_ptr(), {}, std::forward<Fn>(fn)};
  for (const auto& in : inputs) entry.inputs.push_back(in.node_ptr());
  tape->push(std::move(entry));
  return out;
}

}  // namespace detail
}  // namespace uformer
