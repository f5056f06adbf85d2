#pragma once

#include <functional>
#include <vector>

#include "emtm/params.hpp"
#include "emtm/tensor.hpp"

namespace emtm {

class Tape;

// Handle to a node on a tape. Cheap to copy; values/gradients live in the tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}

  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode tape. Single-threaded: one tape per training step/sample.
// Gradients accumulate additively; parameter gradients are flushed into the
// owning Parameter during backward, so the caller zeroes them between steps.
class Tape {
 public:
  using PullFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // With gradients disabled every node is constant: no closures are recorded
  // and backward() is unavailable. Used on the inference path.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // Constant leaf (never receives gradient).
  Var constant(Tensor v) { return make(std::move(v), false, nullptr); }
  // Differentiable non-parameter leaf; its gradient is retrievable after backward.
  Var input(Tensor v) { return make(std::move(v), grad_enabled_, nullptr); }
  // Parameter leaf. backward() adds the node's gradient into p.grad. The
  // read is reported to the owning store's access log when tracking is on.
  Var param(Parameter& p);
  // Constant copy of x's value: blocks gradient flow.
  Var detach(const Var& x) { return constant(x.value()); }

  // Propagates d(loss)/d(node) to every reachable node. loss must be scalar.
  void backward(const Var& loss);

  const Tensor& value(const Var& v) const { return nodes_[check(v)].value; }
  // Gradient of a node after backward; zeros if the node was never reached.
  const Tensor& grad(const Var& v) const;

  std::size_t node_count() const { return nodes_.size(); }
  void clear();

  // --- op construction (used by the op free functions) ---
  Var make(Tensor value, bool needs_grad, PullFn pull);
  bool wants_grad(const Var& v) const { return grad_enabled_ && nodes_[check(v)].needs_grad; }
  const Tensor& value_at(int idx) const { return nodes_[idx].value; }
  // Adds g into the node's gradient buffer (no-op for constants).
  void accum(int idx, const Tensor& g);
  // Lazily-allocated gradient buffer, or nullptr for constants.
  Tensor* grad_slot(int idx);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    PullFn pull;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  int check(const Var& v) const;

  // mutable so grad() can materialize a zero buffer for untouched nodes
  mutable std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace emtm
