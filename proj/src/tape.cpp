#include "skad/tape.hpp"

#include "skad/errors.hpp"

namespace skad {

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw StateError("op input is not on this tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs, needs ? std::move(fn) : nullptr});
  return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

std::size_t Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw StateError("backward from a var not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " +
                         to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;

  std::size_t visited = 0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.fn || n.grad.empty()) continue;
    n.fn(*this, i);
    ++visited;
  }
  return visited;
}

}  // namespace skad
