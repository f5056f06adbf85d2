#include <utility>
#include <vector>

#include "doctest.h"
#include "emtm/ops.hpp"
#include "emtm/student.hpp"
#include "oracles.hpp"

using namespace emtm;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 6;
  cfg.d_v = 5;
  cfg.d_q = 4;
  cfg.m_max = 5;
  cfg.conv_kernel = 3;
  cfg.heads = 2;
  cfg.encoder_blocks = 1;
  cfg.dropout = 0.0;
  return cfg;
}

Tensor random_input(Rng& rng, Index rows, Index cols) {
  Tensor x = Tensor::zeros({rows, cols});
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  return x;
}

// Exhaustive counterpart of decode_span: scan every ordered pair.
std::pair<Index, Index> decode_span_naive(const StartEndDistribution& p) {
  Index bi = 0, bj = 0;
  double best = -1.0;
  for (Index i = 0; i < p.n(); ++i) {
    for (Index j = i; j < p.n(); ++j) {
      double cand = p.p_start[i] * p.p_end[j];
      if (cand > best) {
        best = cand;
        bi = i;
        bj = j;
      }
    }
  }
  return {bi, bj};
}

}  // namespace

TEST_CASE("model config validation rejects bad settings") {
  CHECK_NOTHROW(small_config().validate());

  auto expect_bad = [](auto&& tweak) {
    ModelConfig cfg = small_config();
    tweak(cfg);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  expect_bad([](ModelConfig& c) { c.d = 0; });
  expect_bad([](ModelConfig& c) { c.n = 0; });
  expect_bad([](ModelConfig& c) { c.d_v = -1; });
  expect_bad([](ModelConfig& c) { c.d_q = 0; });
  expect_bad([](ModelConfig& c) { c.m_max = 0; });
  expect_bad([](ModelConfig& c) { c.conv_kernel = 4; });   // even
  expect_bad([](ModelConfig& c) { c.conv_kernel = -3; });
  expect_bad([](ModelConfig& c) { c.heads = 3; });         // 8 % 3 != 0
  expect_bad([](ModelConfig& c) { c.heads = 0; });
  expect_bad([](ModelConfig& c) { c.encoder_blocks = 0; });
  expect_bad([](ModelConfig& c) { c.dropout = 1.0; });
  expect_bad([](ModelConfig& c) { c.dropout = -0.1; });
  expect_bad([](ModelConfig& c) { c.alpha = -0.5; });
  expect_bad([](ModelConfig& c) { c.temperature = 0.0; });

  ModelConfig cfg = small_config();
  CHECK(cfg.sigma_clips() == doctest::Approx(6.0 / 20.0));  // default n/20
  cfg.sigma = 0.7;
  CHECK(cfg.sigma_clips() == doctest::Approx(0.7));
}

TEST_CASE("encodings, fused features and span logits have the documented shapes") {
  ModelConfig cfg = small_config();
  ParameterStore store(11);
  GroundingModel model(store, cfg, "shared.", "student.");
  Rng rng(400);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor query = random_input(rng, 3, cfg.d_q);

  Tape t;
  EncodedPair enc = model.project_and_encode(t, video, query, nullptr);
  CHECK(enc.v_enc.shape() == Shape{cfg.n, cfg.d});
  CHECK(enc.q_enc.shape() == Shape{3, cfg.d});

  Var fused = model.context_query_attention(t, enc, nullptr);
  CHECK(fused.shape() == Shape{cfg.n, cfg.d});

  SpanLogitsOut out = model.predict_spans(t, fused, nullptr);
  CHECK(out.start_logits.shape() == Shape{cfg.n});
  CHECK(out.end_logits.shape() == Shape{cfg.n});

  Var probs = stacked_probs(t, out);
  CHECK(probs.shape() == Shape{2, cfg.n});
  const Tensor& pv = probs.value();
  CHECK(pv.mat().row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pv.mat().row(1).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pv.array().minCoeff() >= 0.0);

  // The one-shot entry point agrees with the staged calls.
  Tape t2;
  EncodedPair enc2;
  SpanLogitsOut out2 = model.forward(t2, video, query, nullptr, &enc2);
  CHECK((out2.start_logits.value().array() == out.start_logits.value().array()).all());
  CHECK((out2.end_logits.value().array() == out.end_logits.value().array()).all());
  CHECK((enc2.v_enc.value().array() == enc.v_enc.value().array()).all());
}

TEST_CASE("input validation names the offending dimension") {
  ModelConfig cfg = small_config();
  ParameterStore store(12);
  GroundingModel model(store, cfg, "shared.", "student.");
  Rng rng(401);
  Tensor good_v = random_input(rng, cfg.n, cfg.d_v);
  Tensor good_q = random_input(rng, 2, cfg.d_q);

  Tape t;
  CHECK_THROWS_AS(model.forward(t, random_input(rng, cfg.n + 1, cfg.d_v), good_q, nullptr),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(t, random_input(rng, cfg.n, cfg.d_v + 2), good_q, nullptr),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(t, good_v, random_input(rng, 2, cfg.d_q - 1), nullptr),
                  DimensionError);
  // Query longer than the positional table admits.
  CHECK_THROWS_AS(model.forward(t, good_v, random_input(rng, cfg.m_max + 1, cfg.d_q), nullptr),
                  ContractError);
}

TEST_CASE("single-token queries make the query-side mixing weight inert") {
  // With one query token the row softmax over query positions is identically
  // 1, and the per-token score only shifts whole columns of the similarity
  // matrix, which the column softmax ignores. So for m = 1 the cqa.wq vector
  // cancels analytically (only rounding noise survives); for m > 1 it has a
  // real effect. The bump hits a single coordinate: a uniform bump would be
  // invisible for any m, because the encoder ends in a zero-mean layer norm
  // and the score is a dot product with those rows.
  ModelConfig cfg = small_config();
  ParameterStore store(13);
  GroundingModel model(store, cfg, "shared.", "student.");
  Rng rng(402);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor q1 = random_input(rng, 1, cfg.d_q);
  Tensor q3 = random_input(rng, 3, cfg.d_q);

  auto run = [&](const Tensor& q) {
    Tape t;
    t.set_grad_enabled(false);
    SpanLogitsOut out = model.forward(t, video, q, nullptr);
    return out.start_logits.value();
  };

  Tensor base1 = run(q1);
  Tensor base3 = run(q3);
  store.at("student.cqa.wq").value[0] += 0.5;
  Tensor bumped1 = run(q1);
  Tensor bumped3 = run(q3);

  CHECK((base1.array() - bumped1.array()).abs().maxCoeff() < 1e-12);
  CHECK((base3.array() - bumped3.array()).abs().maxCoeff() > 1e-9);
}

TEST_CASE("all-zero inputs with a zeroed position table ground to a uniform span") {
  // Biases initialize to zero and zero-padding of zeros stays zero, so a
  // fully zero example must pass through the whole network unchanged and
  // come out as exactly uniform probabilities. (A nonzero constant video
  // would not: the predictor's padded convolutions see shorter neighborhoods
  // at the clip boundaries, which is how the model tells edges apart.)
  ModelConfig cfg = small_config();
  ParameterStore store(14);
  GroundingModel model(store, cfg, "shared.", "student.");
  store.at("student.emb.pos").value.array().setZero();
  Tensor video = Tensor::zeros({cfg.n, cfg.d_v});
  Tensor query = Tensor::zeros({4, cfg.d_q});

  Tape t;
  t.set_grad_enabled(false);
  SpanLogitsOut out = model.forward(t, video, query, nullptr);
  CHECK(out.start_logits.value().array().abs().maxCoeff() == 0.0);
  CHECK(out.end_logits.value().array().abs().maxCoeff() == 0.0);

  Var probs = stacked_probs(t, out);
  CHECK((probs.value().array() - 1.0 / static_cast<double>(cfg.n)).abs().maxCoeff() < 1e-15);
  std::pair<Index, Index> span = decode_span(unstack(probs.value()));
  CHECK(span.first == 0);
  CHECK(span.second == 0);
}

TEST_CASE("perturbing one clip's raw features moves the span logits") {
  ModelConfig cfg = small_config();
  ParameterStore store(15);
  GroundingModel model(store, cfg, "shared.", "student.");
  Rng rng(404);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor query = random_input(rng, 3, cfg.d_q);

  Tape t;
  t.set_grad_enabled(false);
  Tensor base = model.forward(t, video, query, nullptr).start_logits.value();

  video.at(2, 1) += 0.75;
  Tape t2;
  t2.set_grad_enabled(false);
  Tensor moved = model.forward(t2, video, query, nullptr).start_logits.value();
  CHECK((base.array() - moved.array()).abs().maxCoeff() > 1e-9);
}

TEST_CASE("same store seed reproduces the model bit for bit") {
  ModelConfig cfg = small_config();
  Rng rng(405);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor query = random_input(rng, 4, cfg.d_q);

  auto build_and_run = [&]() {
    ParameterStore store(99);
    GroundingModel model(store, cfg, "shared.", "student.");
    Tape t;
    t.set_grad_enabled(false);
    return model.forward(t, video, query, nullptr).end_logits.value();
  };
  Tensor a = build_and_run();
  Tensor b = build_and_run();
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("two models share encoder weights but keep private heads") {
  ModelConfig cfg = small_config();
  ParameterStore store(16);
  GroundingModel student(store, cfg, "shared.", "student.");
  GroundingModel twin(store, cfg, "shared.", "teacher.");

  // The shared prefix was created once: the twin reuses those parameters.
  CHECK(store.contains("shared.ffn_v.w"));
  CHECK(store.contains("student.head_s.w"));
  CHECK(store.contains("teacher.head_s.w"));

  // Same inputs, same shared encoders, but private positional tables and
  // heads keep the two prediction paths genuinely different.
  Rng rng(406);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor query = random_input(rng, 3, cfg.d_q);
  Tape t;
  t.set_grad_enabled(false);
  EncodedPair enc_s, enc_t;
  SpanLogitsOut s = student.forward(t, video, query, nullptr, &enc_s);
  SpanLogitsOut w = twin.forward(t, video, query, nullptr, &enc_t);
  CHECK((s.start_logits.value().array() - w.start_logits.value().array()).abs().maxCoeff() > 1e-9);
  // Even the encodings differ, because each model adds its own position table
  // before the shared encoder.
  CHECK((enc_s.v_enc.value().array() - enc_t.v_enc.value().array()).abs().maxCoeff() > 1e-9);
}

TEST_CASE("decode_span matches exhaustive pair search") {
  Rng rng(407);
  for (int trial = 0; trial < 60; ++trial) {
    Index n = 2 + static_cast<Index>(rng.below(14));
    Eigen::ArrayXd s(n), e(n);
    for (Index i = 0; i < n; ++i) {
      s[i] = rng.uniform();
      e[i] = rng.uniform();
    }
    // Quantize so ties actually occur in many trials.
    if (trial % 3 == 0) {
      s = (s * 4).floor() / 4.0 + 0.01;
      e = (e * 4).floor() / 4.0 + 0.01;
    }
    StartEndDistribution p{s / s.sum(), e / e.sum()};
    CHECK(decode_span(p) == decode_span_naive(p));
  }
}

TEST_CASE("decode_span tie breaking is smallest start then smallest end") {
  Index n = 5;
  StartEndDistribution uniform{Eigen::ArrayXd::Constant(n, 0.2),
                               Eigen::ArrayXd::Constant(n, 0.2)};
  CHECK(decode_span(uniform) == std::pair<Index, Index>{0, 0});

  // Start ties between 1 and 3, end ties between 2 and 4: expect (1, 2).
  Eigen::ArrayXd s = Eigen::ArrayXd::Constant(n, 0.1);
  Eigen::ArrayXd e = Eigen::ArrayXd::Constant(n, 0.1);
  s[1] = s[3] = 0.35;
  e[2] = e[4] = 0.35;
  StartEndDistribution tied{s / s.sum(), e / e.sum()};
  CHECK(decode_span(tied) == std::pair<Index, Index>{1, 2});
  CHECK(decode_span(tied) == decode_span_naive(tied));

  // Best end sits before the best start, forcing the ordered-pair constraint
  // to bind: the decoder must not return (3, 1).
  Eigen::ArrayXd s2 = Eigen::ArrayXd::Constant(n, 0.05);
  Eigen::ArrayXd e2 = Eigen::ArrayXd::Constant(n, 0.05);
  s2[3] = 0.8;
  e2[1] = 0.8;
  StartEndDistribution crossed{s2 / s2.sum(), e2 / e2.sum()};
  std::pair<Index, Index> got = decode_span(crossed);
  CHECK(got.first <= got.second);
  CHECK(got == decode_span_naive(crossed));
}

TEST_CASE("whole-model gradients match finite differences") {
  ModelConfig cfg = small_config();
  ParameterStore store(17);
  GroundingModel model(store, cfg, "shared.", "student.");
  Rng rng(408);
  Tensor video = random_input(rng, cfg.n, cfg.d_v);
  Tensor query = random_input(rng, 4, cfg.d_q);
  Tensor proj = random_input(rng, 2, cfg.n);  // fixed projection to a scalar

  auto build_loss = [&](Tape& t) {
    SpanLogitsOut out = model.forward(t, video, query, nullptr);
    Var probs = stacked_probs(t, out);
    return ops::sum_all(ops::mul(probs, t.constant(proj)));
  };

  testutil::ParamGradReport report = testutil::check_param_grads(store, build_loss);
  CHECK(report.checked == store.total_scalars());
  CHECK(report.frac_within >= 0.95);
  CHECK(report.worst <= 1e-3);
}
