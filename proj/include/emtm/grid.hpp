#pragma once

#include <algorithm>
#include <cmath>

#include "emtm/errors.hpp"
#include "emtm/tensor.hpp"

namespace emtm {

// Uniform discretization of a [0, duration] video into n clips. Index i
// covers [i, i+1) * duration / n; its representative time is the clip center.
struct ClipGrid {
  Index n = 0;
  double duration = 0.0;  // seconds

  ClipGrid(Index n_, double duration_) : n(n_), duration(duration_) {
    if (n <= 0) throw ConfigError("clip grid needs n > 0, got " + std::to_string(n));
    if (!(duration > 0.0))
      throw ConfigError("clip grid needs duration > 0, got " + std::to_string(duration));
  }

  // Clip containing time t, clamped to [0, n-1].
  Index time_to_index(double t) const {
    Index i = static_cast<Index>(std::floor(t / duration * static_cast<double>(n)));
    return std::clamp<Index>(i, 0, n - 1);
  }

  // Center time of clip i.
  double index_to_time(Index i) const {
    return (static_cast<double>(i) + 0.5) * duration / static_cast<double>(n);
  }

  // Fractional index under the clip-center convention: the value mu with
  // index_to_time(mu) == t, clamped to [0, n-1]. time_to_index(index_to_time(i))
  // round-trips to i because the center lies strictly inside the clip.
  double continuous_index(double t) const {
    double mu = t / duration * static_cast<double>(n) - 0.5;
    return std::clamp(mu, 0.0, static_cast<double>(n - 1));
  }
};

}  // namespace emtm
