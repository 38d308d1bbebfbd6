#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <vector>

#include "skad/tensor.hpp"

namespace skad {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

class Tape;

/// Propagates the gradient of node `self` into its inputs.
using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

/// Reverse-mode record of executed operations. Nodes are appended in
/// execution order, so inputs always precede their consumers.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var variable(Tensor value) { return leaf(std::move(value), true); }

  /// Appends an op result. `fn` runs only if some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient from the last backward pass; zeros if the node was not reached.
  Tensor grad(Var v) const;

  /// Gradient buffer of `id` during backward (allocated on first use).
  Tensor& grad_buffer(std::size_t id);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse.
  /// Returns the number of nodes whose backward function ran.
  std::size_t backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn fn;
  };
  std::deque<Node> nodes_;  // deque: references to values stay valid as nodes are added
};

}  // namespace skad
