#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "driveguard/tensor.hpp"

namespace driveguard {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] Tape<T>& tape() const {
    detail::require(tape_ != nullptr, "use of an unbound variable");
    return *tape_;
  }
  [[nodiscard]] const BasicTensor<T>& value() const { return tape().value(id_); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations of one forward pass in execution order and replays
/// them in reverse to distribute gradients. A tape supports exactly one
/// backward pass; recording or differentiating a consumed tape is an error.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad = false) {
    check_open();
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends an op result. The backward closure receives the node id and
  /// reads the upstream gradient through grad(id).
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> record(BasicTensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    check_open();
    bool needs = false;
    for (const Var<T>& in : inputs) {
      detail::require(&in.tape() == this, "op inputs recorded on a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    detail::require(value.all_finite(), "non-finite value produced by forward op");
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs});
    return Var<T>(this, nodes_.size() - 1);
  }

  [[nodiscard]] const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] bool consumed() const { return consumed_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulated for a node; empty if nothing flowed into it.
  [[nodiscard]] const BasicTensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }
  [[nodiscard]] BasicTensor<T> grad_or_zeros(Var<T> v) const {
    const auto& g = grad(v.id());
    return g.empty() ? BasicTensor<T>::zeros(value(v.id()).shape()) : g;
  }

  /// Zero-initialised on first access.
  BasicTensor<T>& grad_accumulator(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.grad.empty()) node.grad = BasicTensor<T>::zeros(node.value.shape());
    return node.grad;
  }

  /// Reverse sweep from output. Scalar outputs default to a unit seed.
  void backward(Var<T> output, const BasicTensor<T>* seed = nullptr) {
    detail::require(!consumed_, "backward on a stale graph: tape already differentiated");
    detail::require(&output.tape() == this, "backward output belongs to a different tape");
    Node& out = nodes_.at(output.id());
    if (seed != nullptr) {
      detail::require(seed->shape() == out.value.shape(), "loss gradient shape ", to_string(seed->shape()),
                      " does not match output ", to_string(out.value.shape()));
      out.grad = *seed;
    } else {
      detail::require(out.value.size() == 1, "non-scalar output needs an explicit gradient seed");
      out.grad = BasicTensor<T>::full(out.value.shape(), T{1});
    }
    consumed_ = true;
    for (std::size_t id = output.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.backward && !node.grad.empty()) node.backward(*this, id);
    }
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_open() const { detail::require(!consumed_, "cannot record on a tape that was already differentiated"); }

  std::deque<Node> nodes_;  // stable references to recorded values
  bool consumed_ = false;
};

}  // namespace driveguard
