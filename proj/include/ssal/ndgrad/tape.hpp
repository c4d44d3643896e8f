#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssal/ndgrad/tensor.hpp"

namespace ssal::ndgrad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Records differentiable operations in execution order. backward() walks the
// record once in reverse, so each node's backward closure fires exactly once.
class Tape {
 public:
  // Receives the tape and the id of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;  // non-empty for leaves bound to a parameter
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push("constant", std::move(value), false, {}, nullptr); }
  Var leaf(Tensor value, bool requires_grad = true) {
    return push("leaf", std::move(value), requires_grad, {}, nullptr);
  }
  Var parameter(const std::string& name, Tensor value) {
    Var v = push("param", std::move(value), true, {}, nullptr);
    nodes_[v.id].param_name = name;
    return v;
  }

  // Records an op output. The backward closure is dropped when no input needs
  // a gradient; the output is checked for non-finite values.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError(op + ": produced a non-finite value");
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape != this) throw std::invalid_argument(op + ": input from a different tape");
      needs = needs || nodes_[in.id].requires_grad;
      ids.push_back(in.id);
    }
    return push(std::move(op), std::move(value), needs, std::move(ids),
                needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_.at(id).inputs.at(k); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the current backward pass w.r.t. node `id` (zeros if untouched).
  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
      n.grad = Tensor::zeros(n.value.shape());
    }
    return n.grad;
  }
  const Tensor& grad(Var v) { return grad(v.id); }

  // Accumulation target for an input gradient, allocated lazily.
  Tensor& grad_sink(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
      n.grad = Tensor::zeros(n.value.shape());
    }
    return n.grad;
  }

  // Reverse sweep from a scalar loss. Returns the visiting order (node ids),
  // which tests use to audit the sweep.
  std::vector<std::size_t> backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from a different tape");
    if (value(loss).size() != 1) {
      throw DimensionError("backward: loss must be scalar, got shape " +
                           to_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_sink(loss.id)[0] = 1.0;
    std::vector<std::size_t> visited;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.empty()) continue;  // not on a path to the loss
      visited.push_back(id);
      n.backward(*this, id);
    }
    return visited;
  }

  // Calls fn(name, grad) for every parameter leaf; untouched parameters get zeros.
  template <typename Fn>
  void for_each_param_grad(Fn&& fn) {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].param_name.empty()) fn(nodes_[id].param_name, grad(id));
    }
  }

 private:
  Var push(std::string op, Tensor value, bool requires_grad, std::vector<std::size_t> inputs,
           BackwardFn backward) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace ssal::ndgrad
