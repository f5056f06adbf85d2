#include "emtm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "emtm/errors.hpp"

namespace emtm {

double iou(std::pair<double, double> pred, std::pair<double, double> gt) {
  if (pred.second < pred.first) {
    throw ContractError("iou: predicted span is unordered (start " +
                        std::to_string(pred.first) + " > end " +
                        std::to_string(pred.second) + ")");
  }
  if (gt.second < gt.first) {
    throw ContractError("iou: reference span is unordered (start " +
                        std::to_string(gt.first) + " > end " +
                        std::to_string(gt.second) + ")");
  }
  const double inter =
      std::min(pred.second, gt.second) - std::max(pred.first, gt.first);
  if (inter <= 0.0) return 0.0;
  const double uni =
      std::max(pred.second, gt.second) - std::min(pred.first, gt.first);
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

namespace {

// Strict hit rate in percent: counts IoU > threshold, never >=.
double recall_at(const std::vector<double>& ious, double threshold) {
  Index hits = 0;
  for (double v : ious) {
    if (v > threshold) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

}  // namespace

double MetricReport::r1_at(double threshold) const {
  for (size_t i = 0; i < thresholds.size(); ++i) {
    if (thresholds[i] == threshold) return r1[i];
  }
  throw ContractError("r1_at: threshold " + std::to_string(threshold) +
                      " was not part of this evaluation");
}

MetricReport evaluate(const std::vector<std::pair<double, double>>& predictions,
                      const std::vector<std::pair<double, double>>& labels,
                      const std::vector<double>& thresholds) {
  if (predictions.size() != labels.size()) {
    throw ContractError("evaluate: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(labels.size()) +
                        " labels");
  }
  if (predictions.empty()) {
    throw ContractError("evaluate: no samples to score");
  }
  if (thresholds.empty()) {
    throw ContractError("evaluate: empty threshold list");
  }

  std::vector<double> ious;
  ious.reserve(predictions.size());
  double iou_sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double v = iou(predictions[i], labels[i]);
    ious.push_back(v);
    iou_sum += v;
  }

  MetricReport report;
  report.thresholds = thresholds;
  report.r1.reserve(thresholds.size());
  for (double t : thresholds) report.r1.push_back(recall_at(ious, t));
  report.miou = 100.0 * iou_sum / static_cast<double>(ious.size());
  report.sumacc = recall_at(ious, 0.5) + recall_at(ious, 0.7);
  report.sumacc_alt = recall_at(ious, 0.3) + recall_at(ious, 0.5);
  return report;
}

}  // namespace emtm
