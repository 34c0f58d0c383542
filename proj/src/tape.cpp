#include "darht/tape.hpp"

#include <string>

#include "darht/errors.hpp"

namespace darht {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}, "constant"); }

Var Tape::variable(Tensor value) { return push(std::move(value), true, {}, "variable"); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op) {
  bool needs_grad = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw UsageError(std::string(op) + ": input belongs to a different tape");
    needs_grad = needs_grad || in.requires_grad();
  }
  if (consumed_) throw UsageError(std::string(op) + ": tape already consumed by backward()");
  return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : BackwardFn{}, op);
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn backward, const char* op) {
  require_finite(value, op);
  if (nodes_.size() >= UINT32_MAX) throw UsageError("tape too large");
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) {
    // Lazily materialize zeros so callers can always read a same-shape buffer.
    auto& self = const_cast<Node&>(n);
    self.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw UsageError("backward: loss belongs to a different tape");
  if (consumed_) throw UsageError("backward: tape already consumed");
  if (loss.value().size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!requires_grad(loss.id())) return;
  grad_buffer(loss.id())[0] = 1.0f;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
    require_finite(n.grad, "backward");
  }
}

}  // namespace darht
