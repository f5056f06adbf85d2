#pragma once

#include <Eigen/Dense>

#include "emtm/tensor.hpp"

namespace emtm {

// Max-subtracted softmax over a plain vector (value-level twin of the tape op;
// both are tested against each other).
Eigen::ArrayXd stable_softmax(const Eigen::ArrayXd& v);

// Paired per-clip probability vectors for a span's start and end positions.
struct StartEndDistribution {
  Eigen::ArrayXd p_start;
  Eigen::ArrayXd p_end;

  Index n() const { return p_start.size(); }

  // Enforces the type invariants: matching lengths, nonnegative entries,
  // each channel summing to 1 within tol. Throws NumericalError.
  void validate(double tol = 1e-6) const;
};

// Row 0 = start channel, row 1 = end channel.
Tensor stack(const StartEndDistribution& d);
StartEndDistribution unstack(const Tensor& stacked);

}  // namespace emtm
