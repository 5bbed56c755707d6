#include "nfembed/numerics/tape.hpp"

#include "nfembed/errors.hpp"
#include "nfembed/simd/kernels.hpp"

namespace nfembed {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape())
    grad = Tensor(value.shape());
  else
    grad.fill(0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant_ref(const Tensor& value) {
  Node node;
  node.borrowed = &value;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(Parameter& p) {
  Node node;
  node.borrowed = &p.value;
  node.needs_grad = p.trainable;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  for (int in : inputs) node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.borrowed ? *n.borrowed : n.owned;
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != value(id).size() || n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

bool Tape::has_grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return !n.grad.shape().empty() && n.grad.size() == value(id).size();
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  visited_ = 0;
  if (!needs_grad(loss.id())) return;
  grad(loss.id())[0] += 1.0;
  const auto& k = simd::kernels();
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || !has_grad(id)) continue;
    ++visited_;
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      k.axpy(p.grad.size(), 1.0, n.grad.data(), p.grad.data());
    }
    if (n.backward) n.backward(*this, id);
  }
}

GradientMap gradient_map(std::span<Parameter* const> params) {
  GradientMap out;
  for (const Parameter* p : params) out[p->name] = p->grad;
  return out;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace nfembed
