#include "emtm/distribution.hpp"

#include <cmath>

#include "emtm/errors.hpp"

namespace emtm {

Eigen::ArrayXd stable_softmax(const Eigen::ArrayXd& v) {
  if (v.size() == 0) throw DimensionError("softmax of an empty vector");
  Eigen::ArrayXd e = (v - v.maxCoeff()).exp();
  return e / e.sum();
}

void StartEndDistribution::validate(double tol) const {
  if (p_start.size() == 0 || p_start.size() != p_end.size())
    throw DimensionError("start/end channels have lengths " + std::to_string(p_start.size()) +
                         " and " + std::to_string(p_end.size()));
  auto check_channel = [tol](const Eigen::ArrayXd& p, const char* which) {
    for (Index i = 0; i < p.size(); ++i) {
      if (!std::isfinite(p[i]))
        throw NumericalError(std::string(which) + " channel has a non-finite entry");
      if (p[i] < 0.0)
        throw NumericalError(std::string(which) + " channel has negative entry " +
                             std::to_string(p[i]) + " at index " + std::to_string(i));
    }
    double s = p.sum();
    if (std::abs(s - 1.0) > tol)
      throw NumericalError(std::string(which) + " channel sums to " + std::to_string(s) +
                           ", expected 1 within " + std::to_string(tol));
  };
  check_channel(p_start, "start");
  check_channel(p_end, "end");
}

Tensor stack(const StartEndDistribution& d) {
  if (d.p_start.size() != d.p_end.size())
    throw DimensionError("start/end channels have lengths " + std::to_string(d.p_start.size()) +
                         " and " + std::to_string(d.p_end.size()));
  Index n = d.p_start.size();
  Tensor t({2, n});
  for (Index i = 0; i < n; ++i) {
    t.at(0, i) = d.p_start[i];
    t.at(1, i) = d.p_end[i];
  }
  return t;
}

StartEndDistribution unstack(const Tensor& stacked) {
  if (stacked.rank() != 2 || stacked.dim(0) != 2)
    throw DimensionError("expected a [2, n] stacked distribution, got " +
                         shape_to_string(stacked.shape()));
  Index n = stacked.dim(1);
  StartEndDistribution d;
  d.p_start.resize(n);
  d.p_end.resize(n);
  for (Index i = 0; i < n; ++i) {
    d.p_start[i] = stacked.at(0, i);
    d.p_end[i] = stacked.at(1, i);
  }
  return d;
}

}  // namespace emtm
