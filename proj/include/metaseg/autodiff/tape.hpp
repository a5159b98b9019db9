#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "metaseg/autodiff/tensor.hpp"

namespace metaseg::ad {

using NodeId = std::size_t;

template <typename T>
class Tape;

// Handle to a value recorded on a tape. This is the "grad_id" linkage of a
// tensor: the value lives on the tape, the handle names it.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  NodeId id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

// Records ops in execution order; node inputs always precede the node, so a
// reverse sweep over ids is a valid reverse-topological order.
template <typename T>
class Tape {
 public:
  // Receives the upstream gradient of the node's output and pushes
  // contributions into its inputs through accumulate().
  using Backward = std::function<void(Tape&, std::span<const T> upstream)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value);
  Var<T> constant(Tensor<T> value);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  void accumulate(NodeId id, std::span<const T> grad);

  // Reverse sweep from a one-element loss. Gradients accumulate across calls
  // until zero_grad().
  void backward(const Var<T>& loss);
  void zero_grad();

  // Gradient of a node; zeros if nothing reached it.
  Tensor<T> grad(const Var<T>& v) const;

  std::size_t size() const { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Backward backward;
    bool requires_grad = false;
    std::vector<T> grad;
  };
  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward);

  std::deque<Node> nodes_;
  bool check_finite_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace metaseg::ad
