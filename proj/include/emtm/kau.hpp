#pragma once

#include <string>
#include <vector>

#include "emtm/distribution.hpp"
#include "emtm/layers.hpp"

namespace emtm {

// Unified predictions from the teacher ensemble, one [2, n] distribution per
// branch. Offline teachers come first, in dump order; when the co-trained
// twin participates its (detached) prediction is appended last.
struct TeacherBank {
  std::vector<StartEndDistribution> distributions;

  Index size() const { return static_cast<Index>(distributions.size()); }
  Index n() const;          // common clip count; throws on empty or mismatched bank
  void validate() const;    // b >= 1, equal lengths, each entry a valid distribution
};

struct KauOutput {
  Var attention;  // [b, 2, n], sums to 1 over the teacher axis per (channel, position)
  Var ensemble;   // [2, n], each row renormalized to sum 1
};

// Instance-conditioned gate over teacher branches: three parallel
// convolutions with widening kernels summarize the video encoding at
// different receptive fields, the query is mean-pooled, and a linear head
// turns the pooled [4d] summary into one weight per (teacher, channel,
// position).
class KnowledgeAggregationUnit {
 public:
  KnowledgeAggregationUnit(ParameterStore& store, Index d, Index n, Index b,
                           const std::string& prefix = "kau.");

  // v_enc [n, d], q_enc [m, d] for any m >= 1.
  KauOutput forward(Tape& t, Var v_enc, Var q_enc, const TeacherBank& bank) const;

  Index teachers() const { return b_; }
  Index param_count() const;

 private:
  Index d_ = 0, n_ = 0, b_ = 0;
  Conv1d conv3_, conv5_, conv7_;
  Linear fc_;  // 4d -> 2*b*n
};

// Closed-form parameter count of the unit above; cross-checked against the
// store in tests.
Index kau_parameter_count(Index d, Index n, Index b);

}  // namespace emtm
