#include "metaseg/autodiff/tape.hpp"

#include <algorithm>

namespace metaseg::ad {

template <typename T>
Tape<T>::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, Backward backward) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericalError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(Node{std::move(value), std::move(backward), requires_grad, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  return push(std::move(value), true, nullptr);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
  bool any = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ValidationError("op mixes variables from different tapes");
    any = any || nodes_[in.id()].requires_grad;
  }
  return push(std::move(value), any, any ? std::move(backward) : Backward{});
}

template <typename T>
void Tape<T>::accumulate(NodeId id, std::span<const T> grad) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return;
  if (grad.size() != node.value.size()) {
    throw ShapeError("gradient length mismatch at node " + std::to_string(id));
  }
  if (node.grad.empty()) {
    node.grad.assign(grad.begin(), grad.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) node.grad[i] += grad[i];
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!loss.valid()) {
    if (nodes_.empty()) return;  // nothing recorded, nothing to do
    throw ValidationError("backward: loss handle is not bound to a tape");
  }
  if (&loss.tape() != this) throw ValidationError("loss belongs to another tape");
  if (nodes_.empty()) return;
  Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
  }
  if (!root.requires_grad) return;
  const T one{1};
  accumulate(loss.id(), std::span<const T>(&one, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, node.grad);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& node : nodes_) node.grad.clear();
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor<T>(node.value.shape());
  return Tensor<T>(node.value.shape(), node.grad);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace metaseg::ad
