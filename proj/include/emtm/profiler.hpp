#pragma once

#include <functional>
#include <string>
#include <vector>

#include "emtm/student.hpp"
#include "emtm/tensor.hpp"

namespace emtm {

// One accounting line: a named piece of the network with its analytic cost.
// FLOPs follow the 2x multiply-add convention (linear: 2*in*out*rows,
// conv1d: 2*k*c_in*c_out*rows); softmax and normalization passes are charged
// a small constant per element. Parameter counts mirror the backing store
// exactly, except that positional embedding tables are excluded by
// convention, the same way word embeddings are left out of size figures.
struct CostItem {
  std::string name;
  long long flops = 0;
  long long params = 0;
};

struct CostReport {
  std::vector<CostItem> items;
  long long flops = 0;   // sum over items
  long long params = 0;  // sum over items
  // Filled in by measure_time when a wall-clock pass is requested.
  double time_ms = 0.0;
  double time_iqr_ms = 0.0;
  int timed_runs = 0;
};

// The inference path is the deployed student alone. The training path adds
// the co-trained twin (which re-runs the shared encoders and owns its own
// private layers) and the aggregation unit over `teacher_branches` bank
// entries. Query-length-dependent terms are charged at m_max, the worst case
// a single sample can present.
enum class CostPath { inference, training };

CostReport count_cost(const ModelConfig& cfg, CostPath path, Index teacher_branches = 4);

// Wall-clock dispersion of a repeated single-sample pass. Runs `warmups`
// untimed passes first, then times `runs` passes and reports the median and
// interquartile range in milliseconds. Never a single draw.
struct TimingStats {
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  int runs = 0;
};

TimingStats measure_time(const std::function<void()>& pass, int runs = 100, int warmups = 10);

}  // namespace emtm
