#include "emtm/kau.hpp"

#include "emtm/errors.hpp"
#include "emtm/ops.hpp"

namespace emtm {

Index TeacherBank::n() const {
  validate();
  return distributions.front().n();
}

void TeacherBank::validate() const {
  if (distributions.empty()) {
    throw ContractError("teacher bank is empty; need at least one branch");
  }
  const Index n0 = distributions.front().n();
  for (std::size_t i = 0; i < distributions.size(); ++i) {
    if (distributions[i].n() != n0) {
      throw DimensionError("teacher bank entry " + std::to_string(i) + " has " +
                           std::to_string(distributions[i].n()) +
                           " clips, expected " + std::to_string(n0));
    }
    distributions[i].validate();
  }
}

KnowledgeAggregationUnit::KnowledgeAggregationUnit(ParameterStore& store, Index d,
                                                   Index n, Index b,
                                                   const std::string& prefix)
    : d_(d), n_(n), b_(b) {
  if (d <= 0 || n <= 0) {
    throw ConfigError("aggregation unit needs positive d and n");
  }
  if (b <= 0) {
    throw ConfigError("aggregation unit needs at least one teacher branch, got " +
                      std::to_string(b));
  }
  conv3_ = Conv1d::create(store, prefix + "conv3", 3, d, d);
  conv5_ = Conv1d::create(store, prefix + "conv5", 5, d, d);
  conv7_ = Conv1d::create(store, prefix + "conv7", 7, d, d);
  fc_ = Linear::create(store, prefix + "fc", 4 * d, 2 * b * n);
}

KauOutput KnowledgeAggregationUnit::forward(Tape& t, Var v_enc, Var q_enc,
                                            const TeacherBank& bank) const {
  bank.validate();
  if (bank.size() != b_) {
    throw DimensionError("teacher bank holds " + std::to_string(bank.size()) +
                         " branches but the unit was built for " +
                         std::to_string(b_));
  }
  const Shape& vs = v_enc.shape();
  if (vs.size() != 2 || vs[0] != n_ || vs[1] != d_) {
    throw DimensionError("video encoding must be [" + std::to_string(n_) + ", " +
                         std::to_string(d_) + "], got " +
                         shape_to_string(vs));
  }
  if (bank.n() != n_) {
    throw DimensionError("teacher bank has " + std::to_string(bank.n()) +
                         " clips but the unit was built for " + std::to_string(n_));
  }

  using namespace ops;

  // Multi-scale video summary: concat of the three conv responses, pooled
  // over time. mean_axis(., 0) keeps a [1, 3d] row; reshape flattens it.
  Var v3 = conv3_(t, v_enc);
  Var v5 = conv5_(t, v_enc);
  Var v7 = conv7_(t, v_enc);
  Var g = reshape(mean_axis(concat({v3, v5, v7}, 1), 0), {3 * d_});
  Var q_avg = reshape(mean_axis(q_enc, 0), {d_});
  Var pooled = reshape(concat({q_avg, g}, 0), {1, 4 * d_});

  // One logit per (teacher, channel, position); the softmax runs over the
  // teacher axis so each (channel, position) cell gets a convex combination.
  Var logits = reshape(fc_(t, pooled), {b_, 2, n_});
  Var attention = softmax(logits, 0);

  // Weighted sum of the bank, then renormalize each channel. The weights are
  // convex per cell but mix across positions, so the row sums drift from 1.
  Var mixed;
  for (Index i = 0; i < b_; ++i) {
    Var a_i = reshape(slice_axis0(attention, i, 1), {2, n_});
    Var p_i = t.constant(stack(bank.distributions[static_cast<std::size_t>(i)]));
    Var term = mul(a_i, p_i);
    mixed = (i == 0) ? term : add(mixed, term);
  }
  return KauOutput{attention, normalize_rows(mixed)};
}

Index KnowledgeAggregationUnit::param_count() const {
  return kau_parameter_count(d_, n_, b_);
}

Index kau_parameter_count(Index d, Index n, Index b) {
  // Convs: k*d*d weights + d bias for k in {3, 5, 7}; head: 4d inputs to
  // 2*b*n outputs plus bias.
  return (3 + 5 + 7) * d * d + 3 * d + (4 * d) * (2 * b * n) + 2 * b * n;
}

}  // namespace emtm
