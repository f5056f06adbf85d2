#pragma once

// Shared test oracles: slow-but-obvious reference implementations and a
// central finite-difference harness for gradient checks. Everything here is
// deliberately naive; the point is independence from the library code paths.

#include <algorithm>
#include <cmath>
#include <vector>

#include "emtm/ops.hpp"
#include "emtm/rng.hpp"
#include "emtm/tape.hpp"
#include "emtm/tensor.hpp"

namespace testutil {

using emtm::Index;
using emtm::Rng;
using emtm::Shape;
using emtm::Tape;
using emtm::Tensor;
using emtm::Var;

// Relative error with a floored denominator so near-zero pairs compare at an
// effective absolute tolerance of floor * rel_tol.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of eval() with respect to *x.
template <class F>
double fd_slope(F&& eval, double* x, double h = 1e-5) {
  double orig = *x;
  *x = orig + h;
  double up = eval();
  *x = orig - h;
  double dn = eval();
  *x = orig;
  return (up - dn) / (2.0 * h);
}

// Gradient check for an op composition. fn(tape, vars) may return any shape;
// the harness contracts it to a scalar with a fixed random projection so every
// output entry influences the loss. Returns the worst relative error over all
// input entries. fn must be a pure function of the input tensors.
template <class Fn>
double max_grad_err(Fn&& fn, std::vector<Tensor> inputs, Rng& rng, double h = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& in : inputs) vars.push_back(tape.input(in));
  Var out = fn(tape, vars);
  Tensor weights(out.shape());
  for (Index i = 0; i < weights.size(); ++i) weights[i] = rng.uniform(-1.0, 1.0);
  Var loss = emtm::ops::sum_all(emtm::ops::mul(out, tape.constant(weights)));
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(vars.size());
  for (const Var& v : vars) analytic.push_back(v.grad());

  auto eval = [&]() {
    Tape t;
    std::vector<Var> cs;
    cs.reserve(inputs.size());
    for (const Tensor& in : inputs) cs.push_back(t.constant(in));
    const Tensor& o = fn(t, cs).value();
    double s = 0.0;
    for (Index i = 0; i < o.size(); ++i) s += o[i] * weights[i];
    return s;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Index i = 0; i < inputs[k].size(); ++i) {
      double fd = fd_slope(eval, &inputs[k][i], h);
      worst = std::max(worst, rel_err(analytic[k][i], fd));
    }
  return worst;
}

// Per-parameter report from check_param_grads.
struct ParamGradReport {
  double worst = 0.0;          // max relative error over every parameter entry
  double frac_within = 1.0;    // fraction of entries with rel err <= threshold
  long checked = 0;
};

// Full-graph gradient check against every entry of every parameter in the
// store. build_loss must rebuild the identical scalar loss on each call (seed
// any dropout inside it). Parameter values are perturbed in place and
// restored.
inline ParamGradReport check_param_grads(emtm::ParameterStore& store,
                                         const std::function<Var(Tape&)>& build_loss,
                                         double threshold = 1e-4, double h = 1e-5) {
  store.zero_grads();
  {
    Tape t;
    Var loss = build_loss(t);
    t.backward(loss);
  }
  auto eval = [&]() {
    Tape t;
    t.set_grad_enabled(false);
    return build_loss(t).value()[0];
  };
  ParamGradReport rep;
  long within = 0;
  for (emtm::Parameter* p : store.all())
    for (Index i = 0; i < p->value.size(); ++i) {
      double fd = fd_slope(eval, &p->value[i], h);
      double err = rel_err(p->grad[i], fd);
      rep.worst = std::max(rep.worst, err);
      rep.checked++;
      if (err <= threshold) within++;
    }
  rep.frac_within = rep.checked ? static_cast<double>(within) / rep.checked : 1.0;
  return rep;
}

// Random tensor with entries kept a margin away from a kink point, so
// finite differences of relu/clamp/max stay on one side of the corner.
inline Tensor random_off_kink(const Shape& shape, Rng& rng, double kink = 0.0,
                              double margin = 1e-3) {
  Tensor out(shape);
  for (Index i = 0; i < out.size(); ++i) {
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v - kink) < margin);
    out[i] = v;
  }
  return out;
}

inline Tensor random_positive(const Shape& shape, Rng& rng, double lo = 0.1, double hi = 2.0) {
  Tensor out(shape);
  for (Index i = 0; i < out.size(); ++i) out[i] = rng.uniform(lo, hi);
  return out;
}

// Three-loop matmul reference.
inline Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  Index p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor out = Tensor::zeros({p, r});
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < r; ++j) {
      double s = 0.0;
      for (Index k = 0; k < q; ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

// Direct same-padding convolution reference: out[i,o] = b[o] + sum over taps.
inline Tensor conv1d_naive(const Tensor& x, const Tensor& w, const Tensor& b) {
  Index n = x.dim(0), cin = x.dim(1);
  Index k = w.dim(0), cout = w.dim(2);
  Index half = k / 2;
  Tensor out = Tensor::zeros({n, cout});
  for (Index i = 0; i < n; ++i)
    for (Index o = 0; o < cout; ++o) {
      double s = b[o];
      for (Index tap = 0; tap < k; ++tap) {
        Index src = i + tap - half;
        if (src < 0 || src >= n) continue;
        for (Index ci = 0; ci < cin; ++ci) s += x.at(src, ci) * w.at(tap, ci, o);
      }
      out.at(i, o) = s;
    }
  return out;
}

}  // namespace testutil
