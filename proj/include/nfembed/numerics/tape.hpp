#pragma once

#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nfembed/numerics/tensor.hpp"

namespace nfembed {

/// Named trainable tensor with its gradient accumulator. Models own their
/// parameters; a Tape only borrows them for the lifetime of one forward pass.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad();
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using BackwardFn = std::function<void(Tape&, int self)>;

/// Reverse-mode computation tape. Nodes are appended in evaluation order, so
/// every node's inputs precede it and a single reverse sweep visits each node
/// once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Borrowed constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf bound to `p`. Gradients flow into p.grad only when p.trainable.
  Var parameter(Parameter& p);

  /// Record an operation result. `backward` runs only if some input needs a gradient.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every trainable
  /// parameter's grad. Throws UsageError unless `loss` holds one value.
  void backward(Var loss);

  const Tensor& value(int id) const;
  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(int id);
  bool has_grad(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const std::vector<int>& inputs(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward step ran in the last backward() call.
  std::size_t visited() const noexcept { return visited_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
    std::vector<int> inputs;
  };

  std::deque<Node> nodes_;
  std::size_t visited_ = 0;
};

/// Snapshot of parameter gradients keyed by parameter name.
using GradientMap = std::map<std::string, Tensor>;
GradientMap gradient_map(std::span<Parameter* const> params);

void zero_grads(std::span<Parameter* const> params);

}  // namespace nfembed
