#include "emtm/distill.hpp"

#include <cmath>

#include "emtm/errors.hpp"
#include "emtm/ops.hpp"

namespace emtm {

namespace {

constexpr double kProbFloor = 1e-12;

double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

Eigen::ArrayXd soften_channel(const Eigen::ArrayXd& p, double t) {
  // p^(1/t) renormalized, computed in log space for stability.
  return stable_softmax(p.max(kProbFloor).log() / t);
}

double kl_channel(const Eigen::ArrayXd& target, const Eigen::ArrayXd& q) {
  double acc = 0.0;
  for (Index i = 0; i < target.size(); ++i) {
    if (target[i] <= 0.0) continue;
    acc += target[i] * (safe_log(target[i]) - safe_log(q[i]));
  }
  return acc;
}

}  // namespace

void HardLabels::validate() const {
  if (n <= 0) {
    throw ContractError("hard labels need a positive clip count, got " +
                        std::to_string(n));
  }
  if (start < 0 || end >= n || start > end) {
    throw OrderingError("span indices (" + std::to_string(start) + ", " +
                        std::to_string(end) + ") must satisfy 0 <= start <= end < " +
                        std::to_string(n));
  }
}

double ce_loss(const StartEndDistribution& p, const HardLabels& y) {
  y.validate();
  if (p.n() != y.n) {
    throw DimensionError("labels cover " + std::to_string(y.n) +
                         " clips but the distribution has " + std::to_string(p.n()));
  }
  return -0.5 * (safe_log(p.p_start[y.start]) + safe_log(p.p_end[y.end]));
}

StartEndDistribution soften(const StartEndDistribution& p, double t) {
  if (t <= 0.0) {
    throw ConfigError("temperature must be positive, got " + std::to_string(t));
  }
  return StartEndDistribution{soften_channel(p.p_start, t),
                              soften_channel(p.p_end, t)};
}

double kl_distill_loss(const StartEndDistribution& student,
                       const StartEndDistribution& ensemble, double t) {
  if (student.n() != ensemble.n()) {
    throw DimensionError("student and ensemble disagree on clip count: " +
                         std::to_string(student.n()) + " vs " +
                         std::to_string(ensemble.n()));
  }
  StartEndDistribution target = soften(ensemble, t);
  StartEndDistribution q = soften(student, t);
  return kl_channel(target.p_start, q.p_start) + kl_channel(target.p_end, q.p_end);
}

LossBreakdown total_loss(const StartEndDistribution& student_p,
                         const StartEndDistribution& teacher_p,
                         const StartEndDistribution& ensemble_p,
                         const HardLabels& y, double alpha, double temperature) {
  LossBreakdown out;
  out.l_st = ce_loss(student_p, y);
  out.l_tc = ce_loss(teacher_p, y);
  out.l_ens = ce_loss(ensemble_p, y);
  out.l_dis = kl_distill_loss(student_p, ensemble_p, temperature);
  out.total = out.l_st + out.l_tc + out.l_ens + alpha * out.l_dis;
  return out;
}

Var ce_loss_node(Tape& t, Var probs, const HardLabels& y) {
  y.validate();
  const Shape& s = probs.shape();
  if (s.size() != 2 || s[0] != 2 || s[1] != y.n) {
    throw DimensionError("expected [2, " + std::to_string(y.n) +
                         "] probabilities, got " + shape_to_string(s));
  }
  Tensor mask = Tensor::zeros({2, y.n});
  mask.at(0, y.start) = 1.0;
  mask.at(1, y.end) = 1.0;
  using namespace ops;
  return scale(sum_all(mul(t.constant(mask), log_(clamp_min(probs, kProbFloor)))),
               -0.5);
}

Var soften_node(Tape& t, Var probs, double temperature) {
  if (temperature <= 0.0) {
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(temperature));
  }
  using namespace ops;
  return softmax(scale(log_(clamp_min(probs, kProbFloor)), 1.0 / temperature), 1);
}

Var kl_distill_node(Tape& t, Var student_probs, Var ensemble_probs,
                    double temperature) {
  using namespace ops;
  Var target = soften_node(t, t.detach(ensemble_probs), temperature);
  Var q = soften_node(t, student_probs, temperature);
  Var log_ratio = sub(log_(clamp_min(target, kProbFloor)),
                      log_(clamp_min(q, kProbFloor)));
  return sum_all(mul(target, log_ratio));
}

SharedModels build_shared_models(ParameterStore& store, const ModelConfig& cfg) {
  SharedModels out;
  out.student = std::make_unique<GroundingModel>(store, cfg, "shared.", "student.");
  out.teacher = std::make_unique<GroundingModel>(store, cfg, "shared.", "teacher.");
  for (const std::string& name : store.names()) {
    if (name.rfind("shared.", 0) == 0) out.shared_names.push_back(name);
  }
  return out;
}

LossBreakdown StepGraph::values(double alpha) const {
  LossBreakdown out;
  out.l_st = l_st.value()[0];
  if (has_tc) out.l_tc = l_tc.value()[0];
  if (has_ens) {
    out.l_ens = l_ens.value()[0];
    out.l_dis = l_dis.value()[0];
  }
  out.total = total.value()[0];
  (void)alpha;  // total already folds alpha in on the tape
  return out;
}

StepGraph build_step_graph(Tape& t, const SharedModels& models,
                           const KnowledgeAggregationUnit* kau,
                           const Tensor& video, const Tensor& query,
                           const TeacherBank& offline_bank, const HardLabels& y,
                           const ModelConfig& cfg, const StepOptions& opts) {
  using namespace ops;
  y.validate();
  if (y.n != cfg.n) {
    throw DimensionError("labels cover " + std::to_string(y.n) +
                         " clips but the model is configured for " +
                         std::to_string(cfg.n));
  }

  StepGraph g;
  EncodedPair enc;
  SpanLogitsOut s_out =
      models.student->forward(t, video, query, opts.dropout_rng, &enc);
  g.student_probs = stacked_probs(t, s_out);
  g.l_st = ce_loss_node(t, g.student_probs, y);
  g.total = g.l_st;

  if (opts.use_shared_encoder) {
    SpanLogitsOut t_out =
        models.teacher->forward(t, video, query, opts.dropout_rng);
    g.twin_probs = stacked_probs(t, t_out);
    g.l_tc = ce_loss_node(t, g.twin_probs, y);
    g.has_tc = true;
    g.total = add(g.total, g.l_tc);
  }

  if (opts.use_label_distillation) {
    if (kau == nullptr) {
      throw ContractError("label distillation is on but no aggregation unit was given");
    }
    TeacherBank bank = offline_bank;
    if (opts.use_shared_encoder) {
      // The twin contributes values only; no gradient flows into it from the
      // ensemble losses.
      bank.distributions.push_back(unstack(opts.frozen_twin_probs != nullptr
                                               ? *opts.frozen_twin_probs
                                               : t.value(g.twin_probs)));
    }
    KauOutput ens = kau->forward(t, enc.v_enc, enc.q_enc, bank);
    g.ensemble_probs = ens.ensemble;
    g.l_ens = ce_loss_node(t, g.ensemble_probs, y);
    Var kl_target = opts.frozen_ensemble != nullptr
                        ? t.constant(*opts.frozen_ensemble)
                        : g.ensemble_probs;
    g.l_dis = kl_distill_node(t, g.student_probs, kl_target, cfg.temperature);
    g.has_ens = true;
    g.total = add(g.total, add(g.l_ens, scale(g.l_dis, cfg.alpha)));
  }

  return g;
}

}  // namespace emtm
