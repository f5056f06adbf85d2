#pragma once

#include <memory>
#include <string>
#include <vector>

#include "emtm/kau.hpp"
#include "emtm/student.hpp"

namespace emtm {

// Ground-truth span as clip indices, start <= end, both in [0, n).
struct HardLabels {
  Index start = 0;
  Index end = 0;
  Index n = 0;

  void validate() const;
};

// Cross entropy against the hard span, averaged over the two channels:
// -(log p_start[start] + log p_end[end]) / 2, probabilities clamped at 1e-12.
double ce_loss(const StartEndDistribution& p, const HardLabels& y);

// Temperature-sharpened/smoothed copy: q proportional to p^(1/t), each
// channel renormalized. t = 1 returns the input (up to rounding); larger t
// flattens, smaller t sharpens. Throws ConfigError for t <= 0.
StartEndDistribution soften(const StartEndDistribution& p, double t);

// KL(soften(ensemble, t) || soften(student, t)) summed over both channels.
// The ensemble acts as a fixed target here; no extra temperature factor is
// applied on top.
double kl_distill_loss(const StartEndDistribution& student,
                       const StartEndDistribution& ensemble, double t);

struct LossBreakdown {
  double l_st = 0.0;   // student cross entropy
  double l_tc = 0.0;   // twin cross entropy
  double l_ens = 0.0;  // ensemble cross entropy
  double l_dis = 0.0;  // distillation KL
  double total = 0.0;  // l_st + l_tc + l_ens + alpha * l_dis
};

// Value-level recomposition of the full objective, for logging and tests.
LossBreakdown total_loss(const StartEndDistribution& student_p,
                         const StartEndDistribution& teacher_p,
                         const StartEndDistribution& ensemble_p,
                         const HardLabels& y, double alpha, double temperature);

// Tape-level counterparts. probs is a [2, n] node with rows that sum to 1.
Var ce_loss_node(Tape& t, Var probs, const HardLabels& y);
Var soften_node(Tape& t, Var probs, double temperature);
// student_probs stays live; ensemble_probs is detached inside so no gradient
// reaches the ensemble through this term.
Var kl_distill_node(Tape& t, Var student_probs, Var ensemble_probs,
                    double temperature);

// Student and its isomorphic twin over one parameter store. Input projections
// and both sequence encoders live under "shared." and are owned by both
// models; attention, predictor and positional tables are private per model.
struct SharedModels {
  std::unique_ptr<GroundingModel> student;
  std::unique_ptr<GroundingModel> teacher;
  std::vector<std::string> shared_names;  // store names both models touch
};

SharedModels build_shared_models(ParameterStore& store, const ModelConfig& cfg);

// Switches for the two co-training mechanisms, plus hooks used by tests.
struct StepOptions {
  bool use_shared_encoder = true;     // twin branch and its loss
  bool use_label_distillation = true; // aggregation unit, ensemble and KL losses
  Rng* dropout_rng = nullptr;         // nullptr runs every dropout as identity
  // Gradient checks need the perturbed and analytic passes to differentiate
  // the same function. The two quantities below are detached on the tape, so
  // a finite-difference probe would otherwise see dependencies the analytic
  // gradient deliberately ignores. Freezing them at their unperturbed values
  // makes both passes agree without changing the gradient at that point.
  const Tensor* frozen_ensemble = nullptr;    // [2, n] KL target
  const Tensor* frozen_twin_probs = nullptr;  // [2, n] twin entry in the bank
};

// One training example's loss graph. Vars for disabled terms are invalid.
struct StepGraph {
  Var total;
  Var l_st, l_tc, l_ens, l_dis;
  Var student_probs;            // [2, n]
  Var twin_probs;               // [2, n], invalid without the shared encoder
  Var ensemble_probs;           // [2, n], invalid without label distillation
  bool has_tc = false;
  bool has_ens = false;

  LossBreakdown values(double alpha) const;
};

// Wires one sample through student (+ twin, + aggregation unit per options)
// and assembles the combined objective. kau may be null only when label
// distillation is off; its branch count must equal offline teachers plus one
// when the twin participates. The twin joins the bank detached, as the last
// entry.
StepGraph build_step_graph(Tape& t, const SharedModels& models,
                           const KnowledgeAggregationUnit* kau,
                           const Tensor& video, const Tensor& query,
                           const TeacherBank& offline_bank, const HardLabels& y,
                           const ModelConfig& cfg, const StepOptions& opts);

}  // namespace emtm
