#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "axi/nn/tensor.hpp"

namespace axi::nn {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
/// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records differentiable operations in execution order; backward() walks the
/// record in reverse. Single-threaded; one tape per forward pass.
template <typename T>
class Tape {
 public:
  using TensorPtr = std::shared_ptr<const Tensor<T>>;
  /// Receives the output gradient and one slot per input; a slot is null when
  /// that input does not require a gradient. Implementations accumulate.
  using BackwardFn =
      std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return leaf(std::make_shared<const Tensor<T>>(std::move(value)), false); }

  Var<T> variable(Tensor<T> value) { return leaf(std::make_shared<const Tensor<T>>(std::move(value)), true); }

  /// Leaf that aliases caller-owned storage; `value` must outlive the tape.
  Var<T> parameter(const Tensor<T>& value, bool requires_grad = true) {
    return leaf(TensorPtr(&value, [](const Tensor<T>*) {}), requires_grad);
  }

  Var<T> record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs,
                BackwardFn backward) {
    Node node;
    node.op = std::string(op);
    node.value = std::make_shared<const Tensor<T>>(std::move(value));
    for (const Var<T>& in : inputs) {
      if (&in.tape() != this) throw std::invalid_argument("operand recorded on a different tape");
      node.inputs.push_back(in.id());
      node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(const Var<T>& v) const { return *nodes_.at(v.id()).value; }
  TensorPtr value_ptr(const Var<T>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }

  const Tensor<T>& grad(const Var<T>& v) const {
    const Node& node = nodes_.at(v.id());
    if (!node.grad) throw std::logic_error("no gradient recorded for " + node.op);
    return *node.grad;
  }

  void backward(const Var<T>& loss) {
    if (backward_done_) throw std::logic_error("backward already ran on this tape");
    Node& root = nodes_.at(loss.id());
    if (root.value->size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + shape_str(root.value->shape()));
    }
    if (!root.requires_grad) throw std::logic_error("loss does not depend on any variable");
    backward_done_ = true;
    order_.clear();
    root.grad = std::make_unique<Tensor<T>>(root.value->shape(), T{1});

    std::vector<Tensor<T>*> slots;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.backward || !node.grad) continue;
      slots.clear();
      for (std::size_t in : node.inputs) {
        Node& src = nodes_[in];
        if (!src.requires_grad) {
          slots.push_back(nullptr);
          continue;
        }
        if (!src.grad) src.grad = std::make_unique<Tensor<T>>(src.value->shape(), T{0});
        slots.push_back(src.grad.get());
      }
      node.backward(*node.grad, slots);
      order_.push_back(id);
    }
    for (Node& node : nodes_) {
      if (node.requires_grad && node.inputs.empty() && !node.grad) {
        node.grad = std::make_unique<Tensor<T>>(node.value->shape(), T{0});
      }
    }
  }

  /// Node ids visited by the last backward(), in visit order.
  const std::vector<std::size_t>& backward_order() const { return order_; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    TensorPtr value;
    std::unique_ptr<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<T> leaf(TensorPtr value, bool requires_grad) {
    Node node;
    node.op = "leaf";
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> order_;
  bool backward_done_ = false;
};

}  // namespace axi::nn
