#pragma once

#include <vector>

#include "emtm/rng.hpp"
#include "emtm/tape.hpp"

// Differentiable ops over tape Vars. Shapes are validated eagerly and
// mismatches throw DimensionError naming both operands.
namespace emtm::ops {

// elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var relu(Var a);
Var log_(Var a);               // caller guarantees positivity (clamp first)
Var clamp_min(Var a, double lo);

// rank-2 linear algebra (operands viewed through their row-major layout)
Var matmul(Var a, Var b);      // [p,q]x[q,r] -> [p,r]
Var transpose(Var a);          // [r,c] -> [c,r]
Var add_rowvec(Var m, Var v);  // m[r,c] + v[c] broadcast over rows
Var add_colvec(Var m, Var v);  // m[r,c] + v[r] broadcast over columns
Var mul_rowvec(Var m, Var v);  // m[r,c] * v[c] broadcast over rows

// shape plumbing
Var reshape(Var a, Shape shape);
Var concat(const std::vector<Var>& parts, int axis);
Var slice_axis0(Var a, Index start, Index count);  // contiguous block along axis 0
Var slice_cols(Var a, Index start, Index count);   // rank-2 column range

// reductions / normalizations
Var softmax(Var a, int axis);      // max-subtracted, lanes sum to 1
Var mean_axis(Var a, int axis);    // drops the axis; rank-1 input -> shape {1}
Var max_axis(Var a, int axis);     // ditto; ties resolve to the lowest index
Var sum_all(Var a);                // shape {1}
Var normalize_rows(Var a);         // rank-2, rows scaled to sum 1 (rows must have nonzero sum)

// neural building blocks
// x[n,cin], w[k,cin,cout] with odd k, b[cout]; zero ("same") padding -> [n,cout]
Var conv1d(Var x, Var w, Var b);
// per-row normalization of x[r,c]: gain*xhat + bias with gain[c], bias[c]
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// inverted dropout; keep_prob = 1-p baked into the mask. rng==nullptr means
// eval mode (identity). Mask is drawn eagerly so the rng stream advances
// deterministically with call order.
Var dropout(Var x, double p, Rng* rng);

// convenience: stacks two length-n vectors into [2,n]
Var stack2(Var a, Var b);

}  // namespace emtm::ops
