#include "emtm/teacher.hpp"

#include <cmath>
#include <ostream>

#include "emtm/errors.hpp"

namespace emtm {

TeacherFormat format_of(const TeacherOutput& o) {
  return static_cast<TeacherFormat>(o.index());
}

std::string format_tag(TeacherFormat f) {
  switch (f) {
    case TeacherFormat::span: return "span";
    case TeacherFormat::map2d: return "map2d";
    case TeacherFormat::regression: return "regression";
    case TeacherFormat::proposals: return "proposals";
  }
  throw ContractError("unhandled teacher format");
}

TeacherFormat parse_format_tag(const std::string& tag) {
  if (tag == "span") return TeacherFormat::span;
  if (tag == "map2d") return TeacherFormat::map2d;
  if (tag == "regression") return TeacherFormat::regression;
  if (tag == "proposals") return TeacherFormat::proposals;
  throw FormatError("unknown teacher format tag '" + tag + "'");
}

double default_sigma_clips(Index n) { return static_cast<double>(n) / 20.0; }

Eigen::ArrayXd gaussian_density_vector(double t, const ClipGrid& grid, double sigma_clips,
                                       std::ostream* warnings) {
  if (!(sigma_clips > 0.0))
    throw ConfigError("gaussian width must be positive, got " + std::to_string(sigma_clips));
  double clamped = t;
  if (t < 0.0 || t > grid.duration) {
    clamped = std::clamp(t, 0.0, grid.duration);
    if (warnings)
      *warnings << "warning: time " << t << "s outside [0, " << grid.duration
                << "]s, clamped to " << clamped << "s\n";
  }
  double mu = grid.continuous_index(clamped);
  Eigen::ArrayXd density(grid.n);
  double inv_two_sigma_sq = 1.0 / (2.0 * sigma_clips * sigma_clips);
  for (Index i = 0; i < grid.n; ++i) {
    double d = static_cast<double>(i) - mu;
    density[i] = std::exp(-d * d * inv_two_sigma_sq);
  }
  return density;
}

StartEndDistribution unify_span(const SpanLogits& o, Index n) {
  if (o.start_logits.size() != n || o.end_logits.size() != n)
    throw FormatError("span logits have lengths " + std::to_string(o.start_logits.size()) +
                      "/" + std::to_string(o.end_logits.size()) + ", expected " +
                      std::to_string(n));
  if (!o.start_logits.isFinite().all() || !o.end_logits.isFinite().all())
    throw FormatError("span logits contain non-finite values");
  StartEndDistribution d;
  d.p_start = stable_softmax(o.start_logits);
  d.p_end = stable_softmax(o.end_logits);
  return d;
}

StartEndDistribution unify_2dmap(const Map2D& o, Index n) {
  if (o.scores.rows() != n || o.scores.cols() != n)
    throw FormatError("2d score map is " + std::to_string(o.scores.rows()) + "x" +
                      std::to_string(o.scores.cols()) + ", expected " + std::to_string(n) + "x" +
                      std::to_string(n));
  if (!o.scores.array().isFinite().all())
    throw FormatError("2d score map contains non-finite values");
  // Entry (i, j) scores the span starting at clip i and ending at clip j, so
  // the best evidence for "start = i" is the best span in row i, and for
  // "end = j" the best span in column j.
  Eigen::ArrayXd row_max = o.scores.rowwise().maxCoeff().array();
  Eigen::ArrayXd col_max = o.scores.colwise().maxCoeff().transpose().array();
  StartEndDistribution d;
  d.p_start = stable_softmax(row_max);
  d.p_end = stable_softmax(col_max);
  return d;
}

StartEndDistribution unify_regression(const RegressionPair& o, const ClipGrid& grid,
                                      double sigma_clips, std::ostream* warnings) {
  if (o.t_start > o.t_end)
    throw OrderingError("regression pair has start " + std::to_string(o.t_start) +
                        "s after end " + std::to_string(o.t_end) + "s");
  StartEndDistribution d;
  d.p_start = stable_softmax(gaussian_density_vector(o.t_start, grid, sigma_clips, warnings));
  d.p_end = stable_softmax(gaussian_density_vector(o.t_end, grid, sigma_clips, warnings));
  return d;
}

StartEndDistribution unify_proposals(const ProposalList& o, const ClipGrid& grid,
                                     double sigma_clips, std::ostream* warnings) {
  if (o.candidates.empty()) throw FormatError("proposal list is empty");
  double total_score = 0.0;
  for (const Proposal& c : o.candidates) {
    if (c.t_start > c.t_end)
      throw OrderingError("proposal has start " + std::to_string(c.t_start) + "s after end " +
                          std::to_string(c.t_end) + "s");
    if (!(c.score >= 0.0))
      throw FormatError("proposal score " + std::to_string(c.score) + " is negative");
    total_score += c.score;
  }
  if (total_score <= 0.0) throw FormatError("proposal scores are all zero");

  // Candidate scores are normalized to total mass 1 before weighting. With a
  // raw weighted sum the k=1 case would pass r * density through the softmax
  // and only agree with the single-pair transform at r == 1; normalizing
  // makes the reduction exact for every score and keeps the output invariant
  // to rescaling all scores, while preserving the candidates' relative
  // weights.
  Eigen::ArrayXd start_acc = Eigen::ArrayXd::Zero(grid.n);
  Eigen::ArrayXd end_acc = Eigen::ArrayXd::Zero(grid.n);
  for (const Proposal& c : o.candidates) {
    double w = c.score / total_score;
    if (w == 0.0) continue;
    start_acc += w * gaussian_density_vector(c.t_start, grid, sigma_clips, warnings);
    end_acc += w * gaussian_density_vector(c.t_end, grid, sigma_clips, warnings);
  }
  StartEndDistribution d;
  d.p_start = stable_softmax(start_acc);
  d.p_end = stable_softmax(end_acc);
  return d;
}

StartEndDistribution unify(const TeacherOutput& o, const ClipGrid& grid, double sigma_clips,
                           std::ostream* warnings) {
  return std::visit(
      [&](const auto& alt) -> StartEndDistribution {
        using T = std::decay_t<decltype(alt)>;
        if constexpr (std::is_same_v<T, SpanLogits>) return unify_span(alt, grid.n);
        else if constexpr (std::is_same_v<T, Map2D>) return unify_2dmap(alt, grid.n);
        else if constexpr (std::is_same_v<T, RegressionPair>)
          return unify_regression(alt, grid, sigma_clips, warnings);
        else
          return unify_proposals(alt, grid, sigma_clips, warnings);
      },
      o);
}

}  // namespace emtm
