#include "apn/tape.hpp"

#include "apn/errors.hpp"

namespace apn {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  value.check_finite("leaf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error(std::string(op) + ": input recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to another tape");
  if (backward_done_) throw Error("backward: tape already consumed");
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) throw NotScalar("backward: loss has shape " + shape_str(root.value.shape()));
  backward_done_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    GradContext ctx{node.value, node.grad, {}, {}};
    ctx.in_values.reserve(node.inputs.size());
    ctx.in_grads.reserve(node.inputs.size());
    for (std::size_t in : node.inputs) {
      Node& input = nodes_[in];
      ctx.in_values.push_back(&input.value);
      if (input.requires_grad) {
        if (input.grad.empty()) input.grad = Tensor(input.value.shape(), 0.0);
        ctx.in_grads.push_back(&input.grad);
      } else {
        ctx.in_grads.push_back(nullptr);
      }
    }
    node.backward(ctx);
    // Interior gradients are not needed once propagated; leaves keep theirs.
    if (!node.inputs.empty()) node.grad = Tensor();
  }
}

Tensor Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.grad.empty()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

}  // namespace apn
