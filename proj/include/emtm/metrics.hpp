#pragma once

#include <utility>
#include <vector>

#include "emtm/tensor.hpp"

namespace emtm {

// Temporal intersection over union of two ordered [start, end] spans in
// seconds. Disjoint spans score 0; so does a zero-length union (two equal
// point spans), by convention.
double iou(std::pair<double, double> pred, std::pair<double, double> gt);

// Quality summary over an evaluation split. All values are percentages.
// r1[i] is the fraction of samples whose IoU strictly exceeds thresholds[i].
// sumacc follows the primary convention R1@0.5 + R1@0.7; the alternate
// convention R1@0.3 + R1@0.5 is reported alongside. Both are computed from
// the fixed canonical thresholds even when a custom threshold list is
// requested.
struct MetricReport {
  std::vector<double> thresholds;
  std::vector<double> r1;
  double miou = 0.0;
  double sumacc = 0.0;
  double sumacc_alt = 0.0;

  double r1_at(double threshold) const;  // ContractError if absent
};

MetricReport evaluate(const std::vector<std::pair<double, double>>& predictions,
                      const std::vector<std::pair<double, double>>& labels,
                      const std::vector<double>& thresholds = {0.3, 0.5, 0.7});

}  // namespace emtm
