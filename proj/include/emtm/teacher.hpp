#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "emtm/distribution.hpp"
#include "emtm/grid.hpp"

// Adapters that project the four heterogeneous teacher output formats onto a
// common start/end distribution. All pure functions.
namespace emtm {

struct SpanLogits {
  Eigen::ArrayXd start_logits;
  Eigen::ArrayXd end_logits;
};

struct Map2D {
  MatXd scores;  // [n, n], entry (i, j) scores the span from clip i to clip j
};

struct RegressionPair {
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
};

struct Proposal {
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
  double score = 0.0;  // >= 0
};

struct ProposalList {
  std::vector<Proposal> candidates;
};

using TeacherOutput = std::variant<SpanLogits, Map2D, RegressionPair, ProposalList>;

enum class TeacherFormat { span, map2d, regression, proposals };

TeacherFormat format_of(const TeacherOutput& o);
std::string format_tag(TeacherFormat f);
TeacherFormat parse_format_tag(const std::string& tag);  // FormatError on unknown tags

// Unnormalized Gaussian bump exp(-(i-mu)^2 / (2 sigma^2)) sampled at each
// integer clip index; mu is the fractional index for time t. The missing
// 1/(sigma sqrt(2 pi)) factor would cancel in the softmax that follows.
Eigen::ArrayXd gaussian_density_vector(double t, const ClipGrid& grid, double sigma_clips,
                                       std::ostream* warnings = nullptr);

StartEndDistribution unify_span(const SpanLogits& o, Index n);
StartEndDistribution unify_2dmap(const Map2D& o, Index n);
StartEndDistribution unify_regression(const RegressionPair& o, const ClipGrid& grid,
                                      double sigma_clips, std::ostream* warnings = nullptr);
StartEndDistribution unify_proposals(const ProposalList& o, const ClipGrid& grid,
                                     double sigma_clips, std::ostream* warnings = nullptr);

// Dispatch on the active alternative.
StartEndDistribution unify(const TeacherOutput& o, const ClipGrid& grid, double sigma_clips,
                           std::ostream* warnings = nullptr);

// Default Gaussian width: n/20 clips, so the bump narrows in absolute time as
// the grid gets finer and the spread stays proportional to sequence length.
double default_sigma_clips(Index n);

}  // namespace emtm
