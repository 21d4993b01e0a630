#pragma once

// Tape-based reverse-mode differentiation.
//
// A Tape is the computation record: every primitive appends one entry
// holding its operand ids, its output value and the closures needed to
// recompute the output (replay) and to push gradients to operands.

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "metagrad/core/error.hpp"
#include "metagrad/core/tensor.hpp"

namespace metagrad::ad {

/// Handle to one entry of a Tape.
struct Var {
  std::size_t id = 0;
};

using Inputs = std::vector<const Tensor*>;
using ForwardFn = std::function<Tensor(const Inputs&)>;
/// Adds the operand gradients into `input_grads`; null entries are operands
/// that do not require a gradient.
using BackwardFn = std::function<void(const Tensor& out_grad, const Tensor& out_value,
                                      const Inputs& inputs,
                                      std::vector<Tensor*>& input_grads)>;

class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Leaf that refers to an external tensor; it must outlive the tape.
  Var leaf_ref(const Tensor& value, bool requires_grad = false) {
    Node n;
    n.ref = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  Var record(std::vector<Var> parents, ForwardFn forward, BackwardFn backward) {
    Node n;
    n.parents.reserve(parents.size());
    bool needs = false;
    for (Var p : parents) {
      check(p);
      n.parents.push_back(p.id);
      needs = needs || nodes_[p.id].requires_grad;
    }
    n.owned = forward(inputs_of(n));
    n.requires_grad = needs;
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    check(v);
    return nodes_[v.id].value();
  }

  bool requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient from the last backward(); zeros if the entry was unreached.
  Tensor grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    if (n.grad) return *n.grad;
    return Tensor(n.value().shape());
  }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar root. Entries are visited strictly in the
  /// reverse of their recording order.
  void backward(Var root, float seed = 1.0f) {
    check(root);
    if (nodes_[root.id].value().size() != 1) {
      throw ShapeError("backward: root must be a scalar, got shape " +
                       to_string(nodes_[root.id].value().shape()));
    }
    for (Node& n : nodes_) n.grad.reset();
    trace_.clear();
    nodes_[root.id].grad = Tensor(nodes_[root.id].value().shape(), seed);

    for (std::size_t i = root.id + 1; i-- > 0;) {
      trace_.push_back(i);
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.grad || !n.backward) continue;
      std::vector<Tensor*> grads(n.parents.size(), nullptr);
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        Node& p = nodes_[n.parents[k]];
        if (!p.requires_grad) continue;
        if (!p.grad) p.grad = Tensor(p.value().shape());
        grads[k] = &*p.grad;
      }
      n.backward(*n.grad, n.value(), inputs_of(n), grads);
    }
  }

  /// Entry ids visited by the last backward(), in visiting order.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

  /// Recompute every recorded entry from its recorded operands and report
  /// whether all outputs are reproduced bit-for-bit.
  bool replay_matches() const {
    for (const Node& n : nodes_) {
      if (!n.forward) continue;
      if (!bitwise_equal(n.forward(inputs_of(n)), n.value())) return false;
    }
    return true;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    std::optional<Tensor> grad;
    std::vector<std::size_t> parents;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  Inputs inputs_of(const Node& n) const {
    Inputs in;
    in.reserve(n.parents.size());
    for (std::size_t p : n.parents) in.push_back(&nodes_[p].value());
    return in;
  }

  void check(Var v) const {
    if (v.id >= nodes_.size()) throw Error("tape: variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> trace_;
};

}  // namespace metagrad::ad
