#include "emtm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "emtm/errors.hpp"

namespace emtm::ops {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("op on a default-constructed Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()) + " differ");
}

void require_rank(const Var& a, Index rank, const char* op) {
  if (a.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(a.shape()));
}

int axis_checked(const Var& a, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(a.value().rank()))
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_to_string(a.shape()));
  return axis;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  out.array() = a.value().array() + b.value().array();
  bool ng = t.wants_grad(a) || t.wants_grad(b);
  int ia = a.index(), ib = b.index();
  return t.make(std::move(out), ng, [ia, ib](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accum(ia, g);
    tp.accum(ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  out.array() = a.value().array() - b.value().array();
  bool ng = t.wants_grad(a) || t.wants_grad(b);
  int ia = a.index(), ib = b.index();
  return t.make(std::move(out), ng, [ia, ib](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accum(ia, g);
    if (Tensor* s = tp.grad_slot(ib)) s->array() -= g.array();
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  out.array() = a.value().array() * b.value().array();
  bool ng = t.wants_grad(a) || t.wants_grad(b);
  int ia = a.index(), ib = b.index();
  return t.make(std::move(out), ng, [ia, ib](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->array() += g.array() * tp.value_at(ib).array();
    if (Tensor* s = tp.grad_slot(ib)) s->array() += g.array() * tp.value_at(ia).array();
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  out.array() = a.value().array() * c;
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia, c](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->array() += g.array() * c;
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  out.array() = a.value().array() + c;
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accum(ia, g);
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  out.array() = a.value().array().max(0.0);
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia))
      s->array() += g.array() * (tp.value_at(ia).array() > 0.0).cast<double>();
  });
}

Var log_(Var a) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  out.array() = a.value().array().log();
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->array() += g.array() / tp.value_at(ia).array();
  });
}

Var clamp_min(Var a, double lo) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  out.array() = a.value().array().max(lo);
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia, lo](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia))
      s->array() += g.array() * (tp.value_at(ia).array() >= lo).cast<double>();
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.value().dim(1) != b.value().dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  Tensor out({a.value().dim(0), b.value().dim(1)});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  bool ng = t.wants_grad(a) || t.wants_grad(b);
  int ia = a.index(), ib = b.index();
  return t.make(std::move(out), ng, [ia, ib](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia))
      s->mat().noalias() += g.mat() * tp.value_at(ib).mat().transpose();
    if (Tensor* s = tp.grad_slot(ib))
      s->mat().noalias() += tp.value_at(ia).mat().transpose() * g.mat();
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  require_rank(a, 2, "transpose");
  Tensor out({a.value().dim(1), a.value().dim(0)});
  out.mat() = a.value().mat().transpose();
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->mat() += g.mat().transpose();
  });
}

Var add_rowvec(Var m, Var v) {
  Tape& t = tape_of(m, v);
  require_rank(m, 2, "add_rowvec");
  require_rank(v, 1, "add_rowvec");
  if (m.value().dim(1) != v.value().dim(0))
    throw DimensionError("add_rowvec: " + shape_to_string(m.shape()) + " vs vector " +
                         shape_to_string(v.shape()));
  Tensor out = m.value();
  out.mat().rowwise() += v.value().vec().transpose();
  bool ng = t.wants_grad(m) || t.wants_grad(v);
  int im = m.index(), iv = v.index();
  return t.make(std::move(out), ng, [im, iv](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accum(im, g);
    if (Tensor* s = tp.grad_slot(iv)) s->vec() += g.mat().colwise().sum().transpose();
  });
}

Var add_colvec(Var m, Var v) {
  Tape& t = tape_of(m, v);
  require_rank(m, 2, "add_colvec");
  require_rank(v, 1, "add_colvec");
  if (m.value().dim(0) != v.value().dim(0))
    throw DimensionError("add_colvec: " + shape_to_string(m.shape()) + " vs vector " +
                         shape_to_string(v.shape()));
  Tensor out = m.value();
  out.mat().colwise() += v.value().vec();
  bool ng = t.wants_grad(m) || t.wants_grad(v);
  int im = m.index(), iv = v.index();
  return t.make(std::move(out), ng, [im, iv](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accum(im, g);
    if (Tensor* s = tp.grad_slot(iv)) s->vec() += g.mat().rowwise().sum();
  });
}

Var mul_rowvec(Var m, Var v) {
  Tape& t = tape_of(m, v);
  require_rank(m, 2, "mul_rowvec");
  require_rank(v, 1, "mul_rowvec");
  if (m.value().dim(1) != v.value().dim(0))
    throw DimensionError("mul_rowvec: " + shape_to_string(m.shape()) + " vs vector " +
                         shape_to_string(v.shape()));
  Tensor out({m.value().dim(0), m.value().dim(1)});
  out.mat().noalias() = m.value().mat() * v.value().vec().asDiagonal();
  bool ng = t.wants_grad(m) || t.wants_grad(v);
  int im = m.index(), iv = v.index();
  return t.make(std::move(out), ng, [im, iv](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(im))
      s->mat().noalias() += g.mat() * tp.value_at(iv).vec().asDiagonal();
    if (Tensor* s = tp.grad_slot(iv))
      s->vec() += g.mat().cwiseProduct(tp.value_at(im).mat()).colwise().sum().transpose();
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(shape);
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->array() += g.array();
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero parts");
  Tape& t = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  int ax = axis_checked(parts.front(), axis, "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("operands live on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size())
      throw DimensionError("concat: rank mismatch, " + shape_to_string(first) + " vs " +
                           shape_to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != ax && s[d] != first[d])
        throw DimensionError("concat: shapes " + shape_to_string(first) + " and " +
                             shape_to_string(s) + " differ off axis " + std::to_string(ax));
    out_shape[ax] += s[ax];
  }

  AxisView ov = axis_view(out_shape, ax);
  Tensor out(out_shape);
  bool ng = false;
  std::vector<int> idx(parts.size());
  std::vector<Index> extents(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    idx[p] = parts[p].index();
    extents[p] = parts[p].shape()[ax];
    ng = ng || t.wants_grad(parts[p]);
  }
  for (Index o = 0; o < ov.outer; ++o) {
    Index dst = o * ov.extent * ov.inner;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      Index len = extents[p] * ov.inner;
      out.flat().segment(dst, len) = parts[p].value().flat().segment(o * len, len);
      dst += len;
    }
  }
  return t.make(std::move(out), ng,
                [idx, extents, ov](Tape& tp, const Tensor&, const Tensor& g) {
                  for (Index o = 0; o < ov.outer; ++o) {
                    Index src = o * ov.extent * ov.inner;
                    for (std::size_t p = 0; p < idx.size(); ++p) {
                      Index len = extents[p] * ov.inner;
                      if (Tensor* s = tp.grad_slot(idx[p]))
                        s->flat().segment(o * len, len) += g.flat().segment(src, len);
                      src += len;
                    }
                  }
                });
}

Var slice_axis0(Var a, Index start, Index count) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() < 1) throw DimensionError("slice_axis0 on a scalar");
  if (start < 0 || count <= 0 || start + count > av.dim(0))
    throw DimensionError("slice_axis0: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside extent " +
                         std::to_string(av.dim(0)));
  Index stride = av.size() / av.dim(0);
  Shape out_shape = av.shape();
  out_shape[0] = count;
  Tensor out(out_shape);
  out.flat() = av.flat().segment(start * stride, count * stride);
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, start, stride](Tape& tp, const Tensor&, const Tensor& g) {
                  if (Tensor* s = tp.grad_slot(ia))
                    s->flat().segment(start * stride, g.size()) += g.flat();
                });
}

Var slice_cols(Var a, Index start, Index count) {
  Tape& t = tape_of(a);
  require_rank(a, 2, "slice_cols");
  const Tensor& av = a.value();
  if (start < 0 || count <= 0 || start + count > av.dim(1))
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside extent " +
                         std::to_string(av.dim(1)));
  Tensor out({av.dim(0), count});
  out.mat() = av.mat().middleCols(start, count);
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, start, count](Tape& tp, const Tensor&, const Tensor& g) {
                  if (Tensor* s = tp.grad_slot(ia))
                    s->mat().middleCols(start, count) += g.mat();
                });
}

Var softmax(Var a, int axis) {
  Tape& t = tape_of(a);
  int ax = axis_checked(a, axis, "softmax");
  AxisView v = axis_view(a.shape(), ax);
  const Tensor& av = a.value();
  Tensor out(a.shape());
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      Index base = o * v.extent * v.inner + i;
      double mx = av[base];
      for (Index e = 1; e < v.extent; ++e) mx = std::max(mx, av[base + e * v.inner]);
      double sum = 0.0;
      for (Index e = 0; e < v.extent; ++e) {
        double ev = std::exp(av[base + e * v.inner] - mx);
        out[base + e * v.inner] = ev;
        sum += ev;
      }
      for (Index e = 0; e < v.extent; ++e) out[base + e * v.inner] /= sum;
    }
  }
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, v](Tape& tp, const Tensor& y, const Tensor& g) {
                  Tensor* s = tp.grad_slot(ia);
                  if (!s) return;
                  for (Index o = 0; o < v.outer; ++o) {
                    for (Index i = 0; i < v.inner; ++i) {
                      Index base = o * v.extent * v.inner + i;
                      double dot = 0.0;
                      for (Index e = 0; e < v.extent; ++e) {
                        Index k = base + e * v.inner;
                        dot += g[k] * y[k];
                      }
                      for (Index e = 0; e < v.extent; ++e) {
                        Index k = base + e * v.inner;
                        (*s)[k] += y[k] * (g[k] - dot);
                      }
                    }
                  }
                });
}

namespace {

Shape drop_axis(const Shape& in, int axis) {
  Shape out;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (static_cast<int>(d) != axis) out.push_back(in[d]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Var mean_axis(Var a, int axis) {
  Tape& t = tape_of(a);
  int ax = axis_checked(a, axis, "mean_axis");
  AxisView v = axis_view(a.shape(), ax);
  const Tensor& av = a.value();
  Tensor out(drop_axis(a.shape(), ax));
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      Index base = o * v.extent * v.inner + i;
      double sum = 0.0;
      for (Index e = 0; e < v.extent; ++e) sum += av[base + e * v.inner];
      out[o * v.inner + i] = sum / static_cast<double>(v.extent);
    }
  }
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, v](Tape& tp, const Tensor&, const Tensor& g) {
                  Tensor* s = tp.grad_slot(ia);
                  if (!s) return;
                  double inv = 1.0 / static_cast<double>(v.extent);
                  for (Index o = 0; o < v.outer; ++o)
                    for (Index i = 0; i < v.inner; ++i) {
                      double gv = g[o * v.inner + i] * inv;
                      Index base = o * v.extent * v.inner + i;
                      for (Index e = 0; e < v.extent; ++e) (*s)[base + e * v.inner] += gv;
                    }
                });
}

Var max_axis(Var a, int axis) {
  Tape& t = tape_of(a);
  int ax = axis_checked(a, axis, "max_axis");
  AxisView v = axis_view(a.shape(), ax);
  const Tensor& av = a.value();
  Tensor out(drop_axis(a.shape(), ax));
  std::vector<Index> arg(static_cast<std::size_t>(v.outer * v.inner));
  for (Index o = 0; o < v.outer; ++o) {
    for (Index i = 0; i < v.inner; ++i) {
      Index base = o * v.extent * v.inner + i;
      Index best = 0;
      double bv = av[base];
      for (Index e = 1; e < v.extent; ++e) {
        double cur = av[base + e * v.inner];
        if (cur > bv) {  // strict: ties keep the lowest index
          bv = cur;
          best = e;
        }
      }
      out[o * v.inner + i] = bv;
      arg[static_cast<std::size_t>(o * v.inner + i)] = best;
    }
  }
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, v, arg](Tape& tp, const Tensor&, const Tensor& g) {
                  Tensor* s = tp.grad_slot(ia);
                  if (!s) return;
                  for (Index o = 0; o < v.outer; ++o)
                    for (Index i = 0; i < v.inner; ++i) {
                      Index flat = o * v.inner + i;
                      Index e = arg[static_cast<std::size_t>(flat)];
                      (*s)[o * v.extent * v.inner + e * v.inner + i] += g[flat];
                    }
                });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  Tensor out = Tensor::scalar(a.value().array().sum());
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a), [ia](Tape& tp, const Tensor&, const Tensor& g) {
    if (Tensor* s = tp.grad_slot(ia)) s->array() += g[0];
  });
}

Var normalize_rows(Var a) {
  Tape& t = tape_of(a);
  require_rank(a, 2, "normalize_rows");
  const Tensor& av = a.value();
  Index r = av.dim(0), c = av.dim(1);
  Tensor sums({r});
  sums.vec() = av.mat().rowwise().sum();
  for (Index i = 0; i < r; ++i)
    if (!(sums[i] > 0.0))
      throw NumericalError("normalize_rows: row " + std::to_string(i) +
                           " sums to " + std::to_string(sums[i]));
  Tensor out({r, c});
  out.mat() = sums.vec().cwiseInverse().asDiagonal() * av.mat();
  int ia = a.index();
  return t.make(std::move(out), t.wants_grad(a),
                [ia, sums](Tape& tp, const Tensor& y, const Tensor& g) {
                  Tensor* s = tp.grad_slot(ia);
                  if (!s) return;
                  for (Index i = 0; i < y.dim(0); ++i) {
                    double dot = g.mat().row(i).dot(y.mat().row(i));
                    s->mat().row(i) += ((g.mat().row(i).array() - dot) / sums[i]).matrix();
                  }
                });
}

Var conv1d(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  if (b.tape() != &t) throw ContractError("operands live on different tapes");
  require_rank(x, 2, "conv1d");
  require_rank(b, 1, "conv1d");
  if (w.value().rank() != 3)
    throw DimensionError("conv1d: weight must be [kernel, in, out], got " +
                         shape_to_string(w.shape()));
  Index n = x.value().dim(0), cin = x.value().dim(1);
  Index k = w.value().dim(0), wcin = w.value().dim(1), cout = w.value().dim(2);
  if (k % 2 == 0) throw DimensionError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (wcin != cin)
    throw DimensionError("conv1d: input channels " + std::to_string(cin) +
                         " vs weight " + shape_to_string(w.shape()));
  if (b.value().dim(0) != cout)
    throw DimensionError("conv1d: bias " + shape_to_string(b.shape()) + " vs " +
                         std::to_string(cout) + " output channels");

  auto tap = [cin, cout](const Tensor& wt, Index s) {
    return Eigen::Map<const MatXd>(wt.data() + s * cin * cout, cin, cout);
  };
  Index half = k / 2;
  Tensor out({n, cout});
  out.mat() = b.value().vec().transpose().replicate(n, 1);
  for (Index s = 0; s < k; ++s) {
    Index off = s - half;
    Index lo = std::max<Index>(0, -off);
    Index len = n - std::abs(off);
    if (len <= 0) continue;
    out.mat().middleRows(lo, len).noalias() +=
        x.value().mat().middleRows(lo + off, len) * tap(w.value(), s);
  }
  bool ng = t.wants_grad(x) || t.wants_grad(w) || t.wants_grad(b);
  int ix = x.index(), iw = w.index(), ib = b.index();
  return t.make(std::move(out), ng,
                [ix, iw, ib, n, cin, cout, k, half, tap](Tape& tp, const Tensor&, const Tensor& g) {
                  if (Tensor* s = tp.grad_slot(ib)) s->vec() += g.mat().colwise().sum().transpose();
                  Tensor* sx = tp.grad_slot(ix);
                  Tensor* sw = tp.grad_slot(iw);
                  const Tensor& xv = tp.value_at(ix);
                  const Tensor& wv = tp.value_at(iw);
                  for (Index s = 0; s < k; ++s) {
                    Index off = s - half;
                    Index lo = std::max<Index>(0, -off);
                    Index len = n - std::abs(off);
                    if (len <= 0) continue;
                    if (sw) {
                      Eigen::Map<MatXd> dws(sw->data() + s * cin * cout, cin, cout);
                      dws.noalias() +=
                          xv.mat().middleRows(lo + off, len).transpose() * g.mat().middleRows(lo, len);
                    }
                    if (sx)
                      sx->mat().middleRows(lo + off, len).noalias() +=
                          g.mat().middleRows(lo, len) * tap(wv, s).transpose();
                  }
                });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  if (bias.tape() != &t) throw ContractError("operands live on different tapes");
  require_rank(x, 2, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  Index r = x.value().dim(0), c = x.value().dim(1);
  if (gain.value().dim(0) != c || bias.value().dim(0) != c)
    throw DimensionError("layer_norm: feature width " + std::to_string(c) + " vs gain " +
                         shape_to_string(gain.shape()) + ", bias " + shape_to_string(bias.shape()));

  Tensor xhat({r, c});
  Tensor inv_std({r});
  const auto xm = x.value().mat();
  for (Index i = 0; i < r; ++i) {
    double mu = xm.row(i).mean();
    double var = (xm.row(i).array() - mu).square().mean();
    double s = 1.0 / std::sqrt(var + eps);
    inv_std[i] = s;
    xhat.mat().row(i) = (xm.row(i).array() - mu) * s;
  }
  Tensor out({r, c});
  out.mat() = xhat.mat() * gain.value().vec().asDiagonal();
  out.mat().rowwise() += bias.value().vec().transpose();

  bool ng = t.wants_grad(x) || t.wants_grad(gain) || t.wants_grad(bias);
  int ix = x.index(), ig = gain.index(), ib = bias.index();
  return t.make(std::move(out), ng,
                [ix, ig, ib, xhat, inv_std, r, c](Tape& tp, const Tensor&, const Tensor& g) {
                  if (Tensor* s = tp.grad_slot(ib)) s->vec() += g.mat().colwise().sum().transpose();
                  if (Tensor* s = tp.grad_slot(ig))
                    s->vec() += g.mat().cwiseProduct(xhat.mat()).colwise().sum().transpose();
                  Tensor* sx = tp.grad_slot(ix);
                  if (!sx) return;
                  const auto gv = tp.value_at(ig).vec();
                  for (Index i = 0; i < r; ++i) {
                    Eigen::ArrayXd dxhat = g.mat().row(i).transpose().array() * gv.array();
                    Eigen::ArrayXd xh = xhat.mat().row(i).transpose().array();
                    double m1 = dxhat.mean();
                    double m2 = (dxhat * xh).mean();
                    Eigen::ArrayXd dx = inv_std[i] * (dxhat - m1 - xh * m2);
                    sx->mat().row(i) += dx.matrix().transpose();
                  }
                });
}

Var dropout(Var x, double p, Rng* rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!rng || p == 0.0) return x;
  Tape& t = tape_of(x);
  Tensor mask(x.shape());
  double keep_scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng->uniform() < p ? 0.0 : keep_scale;
  Tensor out(x.shape());
  out.array() = x.value().array() * mask.array();
  int ix = x.index();
  return t.make(std::move(out), t.wants_grad(x),
                [ix, mask](Tape& tp, const Tensor&, const Tensor& g) {
                  if (Tensor* s = tp.grad_slot(ix)) s->array() += g.array() * mask.array();
                });
}

Var stack2(Var a, Var b) {
  require_rank(a, 1, "stack2");
  require_rank(b, 1, "stack2");
  Index n = a.value().dim(0);
  return concat({reshape(a, {1, n}), reshape(b, {1, n})}, 0);
}

}  // namespace emtm::ops
