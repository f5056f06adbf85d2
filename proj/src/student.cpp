#include "emtm/student.hpp"

#include <algorithm>

#include "emtm/errors.hpp"

namespace emtm {

namespace op = ops;

void ModelConfig::validate() const {
  if (d <= 0 || n <= 0 || d_v <= 0 || d_q <= 0 || m_max <= 0)
    throw ConfigError("model extents must be positive (d=" + std::to_string(d) +
                      ", n=" + std::to_string(n) + ", d_v=" + std::to_string(d_v) +
                      ", d_q=" + std::to_string(d_q) + ", m_max=" + std::to_string(m_max) + ")");
  if (conv_kernel <= 0 || conv_kernel % 2 == 0)
    throw ConfigError("conv_kernel must be odd and positive, got " + std::to_string(conv_kernel));
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("hidden width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (encoder_blocks <= 0)
    throw ConfigError("encoder_blocks must be positive, got " + std::to_string(encoder_blocks));
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must be in [0, 1), got " + std::to_string(dropout));
  if (alpha < 0.0) throw ConfigError("alpha must be nonnegative, got " + std::to_string(alpha));
  if (!(temperature > 0.0))
    throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
}

GroundingModel::GroundingModel(ParameterStore& store, const ModelConfig& cfg,
                               const std::string& shared_prefix,
                               const std::string& private_prefix)
    : cfg_(cfg) {
  cfg.validate();
  ffn_v_ = Linear::create(store, shared_prefix + "ffn_v", cfg.d_v, cfg.d);
  ffn_q_ = Linear::create(store, shared_prefix + "ffn_q", cfg.d_q, cfg.d);
  vis_enc_ = SequenceEncoder::create(store, shared_prefix + "vis_enc", cfg.d, cfg.conv_kernel,
                                     cfg.heads, cfg.encoder_blocks);
  qry_enc_ = SequenceEncoder::create(store, shared_prefix + "qry_enc", cfg.d, cfg.conv_kernel,
                                     cfg.heads, cfg.encoder_blocks);

  pos_ = PositionalEmbedding::create(store, private_prefix + "emb", std::max(cfg.n, cfg.m_max),
                                     cfg.d);
  auto vec_init = [d = cfg.d](Rng& r, const Shape& s) { return xavier_uniform(r, s, d, 1); };
  cqa_wv_ = &store.get_or_create(private_prefix + "cqa.wv", {cfg.d}, vec_init);
  cqa_wq_ = &store.get_or_create(private_prefix + "cqa.wq", {cfg.d}, vec_init);
  cqa_wvq_ = &store.get_or_create(private_prefix + "cqa.wvq", {cfg.d}, vec_init);
  cqa_ffn_ = Linear::create(store, private_prefix + "cqa.ffn", 4 * cfg.d, cfg.d);
  pred_block1_ = ConvBlock::create(store, private_prefix + "pred.block1", cfg.conv_kernel, cfg.d);
  pred_block2_ = ConvBlock::create(store, private_prefix + "pred.block2", cfg.conv_kernel, cfg.d);
  head_start_ = Linear::create(store, private_prefix + "head_s", cfg.d, 1);
  head_end_ = Linear::create(store, private_prefix + "head_e", cfg.d, 1);
}

EncodedPair GroundingModel::project_and_encode(Tape& t, const Tensor& video, const Tensor& query,
                                               Rng* dropout_rng) const {
  if (video.rank() != 2 || video.dim(0) != cfg_.n || video.dim(1) != cfg_.d_v)
    throw DimensionError("video features are " + shape_to_string(video.shape()) + ", expected [" +
                         std::to_string(cfg_.n) + ", " + std::to_string(cfg_.d_v) + "]");
  if (query.rank() != 2 || query.dim(1) != cfg_.d_q)
    throw DimensionError("query features are " + shape_to_string(query.shape()) +
                         ", expected [m, " + std::to_string(cfg_.d_q) + "]");
  Index m = query.dim(0);
  if (m < 1 || m > cfg_.m_max)
    throw ContractError("query length " + std::to_string(m) + " outside [1, " +
                        std::to_string(cfg_.m_max) + "]");

  Var v_proj = op::add(ffn_v_(t, t.constant(video)), pos_.slice(t, cfg_.n));
  Var q_proj = op::add(ffn_q_(t, t.constant(query)), pos_.slice(t, m));
  EncodedPair enc;
  enc.v_enc = vis_enc_(t, v_proj, cfg_.dropout, dropout_rng);
  enc.q_enc = qry_enc_(t, q_proj, cfg_.dropout, dropout_rng);
  return enc;
}

Var GroundingModel::context_query_attention(Tape& t, const EncodedPair& enc,
                                            Rng* dropout_rng) const {
  Var vp = enc.v_enc;  // [n, d]
  Var qp = enc.q_enc;  // [m, d]
  Index d = cfg_.d;

  // trilinear similarity s_ij = wv.v_i + wq.q_j + wvq.(v_i * q_j)
  Var sv = op::reshape(op::matmul(vp, op::reshape(t.param(*cqa_wv_), {d, 1})), {vp.value().dim(0)});
  Var sq = op::reshape(op::matmul(qp, op::reshape(t.param(*cqa_wq_), {d, 1})), {qp.value().dim(0)});
  Var cross = op::matmul(op::mul_rowvec(vp, t.param(*cqa_wvq_)), op::transpose(qp));  // [n, m]
  Var sim = op::add_colvec(op::add_rowvec(cross, sq), sv);

  Var s_row = op::softmax(sim, 1);  // rows sum to 1
  Var s_col = op::softmax(sim, 0);  // columns sum to 1
  Var a = op::matmul(s_row, qp);                                     // [n, d]
  Var b = op::matmul(s_row, op::matmul(op::transpose(s_col), vp));   // [n, d]
  Var cat = op::concat({vp, a, op::mul(vp, a), op::mul(vp, b)}, 1);  // [n, 4d]
  return op::dropout(cqa_ffn_(t, cat), cfg_.dropout, dropout_rng);
}

SpanLogitsOut GroundingModel::predict_spans(Tape& t, Var fused, Rng* dropout_rng) const {
  Var b1 = pred_block1_(t, fused, cfg_.dropout, dropout_rng);
  SpanLogitsOut out;
  out.start_logits = op::reshape(head_start_(t, b1), {cfg_.n});
  Var b2 = pred_block2_(t, b1, cfg_.dropout, dropout_rng);
  out.end_logits = op::reshape(head_end_(t, b2), {cfg_.n});
  return out;
}

SpanLogitsOut GroundingModel::forward(Tape& t, const Tensor& video, const Tensor& query,
                                      Rng* dropout_rng, EncodedPair* enc_out) const {
  EncodedPair enc = project_and_encode(t, video, query, dropout_rng);
  if (enc_out) *enc_out = enc;
  Var fused = context_query_attention(t, enc, dropout_rng);
  return predict_spans(t, fused, dropout_rng);
}

Var stacked_probs(Tape& t, const SpanLogitsOut& logits) {
  return op::softmax(op::stack2(logits.start_logits, logits.end_logits), 1);
}

std::pair<Index, Index> decode_span(const StartEndDistribution& p) {
  Index n = p.n();
  if (n == 0 || p.p_end.size() != n)
    throw DimensionError("decode_span on channels of lengths " + std::to_string(p.p_start.size()) +
                         " and " + std::to_string(p.p_end.size()));
  // best_end[i]: smallest j >= i maximizing p_end[j]
  std::vector<Index> best_end(static_cast<std::size_t>(n));
  best_end[static_cast<std::size_t>(n - 1)] = n - 1;
  for (Index i = n - 2; i >= 0; --i) {
    Index next = best_end[static_cast<std::size_t>(i + 1)];
    best_end[static_cast<std::size_t>(i)] = p.p_end[i] >= p.p_end[next] ? i : next;
  }
  Index bi = 0, bj = best_end[0];
  double best = p.p_start[0] * p.p_end[bj];
  for (Index i = 1; i < n; ++i) {
    Index j = best_end[static_cast<std::size_t>(i)];
    double cand = p.p_start[i] * p.p_end[j];
    if (cand > best) {  // strict: ties keep the smallest start
      best = cand;
      bi = i;
      bj = j;
    }
  }
  return {bi, bj};
}

}  // namespace emtm
