#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "apn/tensor.hpp"

namespace apn {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives. References returned by value()/shape() stay valid for the same span.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  // Gradient accumulated by Tape::backward; zeros if the node received none.
  Tensor grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// What a backward closure sees: the node's output value/gradient and, per
// input, its value and a gradient accumulator (null when that input does not
// require a gradient).
struct GradContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;

  const Tensor& in(std::size_t i) const { return *in_values[i]; }
  Tensor* grad(std::size_t i) const { return in_grads[i]; }
};

using BackwardFn = std::function<void(const GradContext&)>;

// Reverse-mode recording. Nodes are appended in evaluation order, so the
// node list is already topologically sorted. One tape per forward pass; it is
// not thread-safe, but independent tapes may run on different threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op output. Non-finite outputs raise NonFiniteError naming `op`.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every node that requires a
  // gradient. One backward per tape.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor grad(std::size_t id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  // A deque keeps references to earlier values valid while new nodes are appended.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace apn
