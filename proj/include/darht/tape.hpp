#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>

#include "darht/tensor.hpp"

namespace darht {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Accumulated gradient; zeros until backward() has run.
  const Tensor& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode differentiation record. Nodes are appended in execution
// order, so the node list is already topologically sorted. A tape supports
// exactly one backward pass.
class Tape {
 public:
  // Receives the tape and the id of the node whose output gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Appends an op output. `backward` may be empty when no input needs a
  // gradient; it is only invoked for nodes that require one.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op);

  void backward(Var loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer for accumulation from inside a BackwardFn.
  Tensor& grad_buffer(std::uint32_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward, const char* op);

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace darht
