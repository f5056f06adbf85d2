#include "emtm/tape.hpp"

#include "emtm/errors.hpp"

namespace emtm {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("Var::value on a default-constructed handle");
  return tape_->value(*this);
}

const Tensor& Var::grad() const {
  if (!tape_) throw ContractError("Var::grad on a default-constructed handle");
  return tape_->grad(*this);
}

int Tape::check(const Var& v) const {
  if (v.tape() != this || v.index() < 0 || v.index() >= static_cast<int>(nodes_.size()))
    throw ContractError("Var does not belong to this tape");
  return v.index();
}

Var Tape::make(Tensor value, bool needs_grad, PullFn pull) {
  Node nd;
  nd.value = std::move(value);
  nd.needs_grad = grad_enabled_ && needs_grad;
  if (nd.needs_grad) nd.pull = std::move(pull);
  nodes_.push_back(std::move(nd));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (p.owner) p.owner->note_access(p.name);
  Var v = make(p.value, grad_enabled_, nullptr);
  nodes_[v.index()].param = grad_enabled_ ? &p : nullptr;
  return v;
}

void Tape::accum(int idx, const Tensor& g) {
  Node& nd = nodes_[idx];
  if (!nd.needs_grad) return;
  if (!nd.value.same_shape(g))
    throw DimensionError("gradient shape " + shape_to_string(g.shape()) +
                         " does not match node shape " + shape_to_string(nd.value.shape()));
  if (nd.grad.size() == 0) nd.grad = Tensor::zeros(nd.value.shape());
  nd.grad.array() += g.array();
}

Tensor* Tape::grad_slot(int idx) {
  Node& nd = nodes_[idx];
  if (!nd.needs_grad) return nullptr;
  if (nd.grad.size() == 0) nd.grad = Tensor::zeros(nd.value.shape());
  return &nd.grad;
}

const Tensor& Tape::grad(const Var& v) const {
  Node& nd = nodes_[check(v)];
  if (nd.grad.size() == 0) nd.grad = Tensor::zeros(nd.value.shape());
  return nd.grad;
}

void Tape::backward(const Var& loss) {
  if (!grad_enabled_) throw ContractError("backward on a tape with gradients disabled");
  int root = check(loss);
  Node& top = nodes_[root];
  if (top.value.size() != 1)
    throw ContractError("backward expects a scalar loss, got shape " + shape_to_string(top.value.shape()));
  if (!top.needs_grad)
    throw ContractError("loss does not depend on any differentiable node");
  if (top.grad.size() == 0) top.grad = Tensor::zeros(top.value.shape());
  top.grad[0] += 1.0;

  for (int i = root; i >= 0; --i) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || nd.grad.size() == 0) continue;
    if (nd.pull) nd.pull(*this, nd.value, nd.grad);
    if (nd.param) nd.param->grad.array() += nd.grad.array();
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace emtm
