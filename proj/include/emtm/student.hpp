#pragma once

#include <string>
#include <utility>

#include "emtm/distribution.hpp"
#include "emtm/layers.hpp"

namespace emtm {

// Architecture and training hyperparameters for one experiment.
struct ModelConfig {
  Index d = 128;       // hidden width
  Index n = 32;        // clips per video
  Index d_v = 64;      // raw visual feature dim
  Index d_q = 50;      // raw query feature dim
  Index m_max = 10;    // longest query accepted
  Index conv_kernel = 7;
  int heads = 8;
  int encoder_blocks = 2;
  double dropout = 0.2;
  double sigma = 0.0;        // gaussian width in clips; <= 0 means n/20
  double alpha = 0.1;        // distillation weight
  double temperature = 1.0;  // softening temperature
  std::uint64_t seed = 1;

  double sigma_clips() const { return sigma > 0.0 ? sigma : static_cast<double>(n) / 20.0; }
  void validate() const;
};

struct EncodedPair {
  Var v_enc;  // [n, d]
  Var q_enc;  // [m, d]
};

struct SpanLogitsOut {
  Var start_logits;  // [n]
  Var end_logits;    // [n]
};

// The span-grounding network: project + position, two sequence encoders, a
// context-query attention fusion, and a two-head boundary predictor. The
// encoder half (FFN projections and both sequence encoders) is created under
// shared_prefix so a second model built on the same store aliases those
// weights; everything else lives under private_prefix.
class GroundingModel {
 public:
  GroundingModel(ParameterStore& store, const ModelConfig& cfg, const std::string& shared_prefix,
                 const std::string& private_prefix);

  // video [n, d_v], query [m, d_q] with 1 <= m <= m_max.
  EncodedPair project_and_encode(Tape& t, const Tensor& video, const Tensor& query,
                                 Rng* dropout_rng) const;
  Var context_query_attention(Tape& t, const EncodedPair& enc, Rng* dropout_rng) const;  // [n, d]
  SpanLogitsOut predict_spans(Tape& t, Var fused, Rng* dropout_rng) const;

  SpanLogitsOut forward(Tape& t, const Tensor& video, const Tensor& query, Rng* dropout_rng,
                        EncodedPair* enc_out = nullptr) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  // shared with the isomorphic twin
  Linear ffn_v_, ffn_q_;
  SequenceEncoder vis_enc_, qry_enc_;
  // per-model
  PositionalEmbedding pos_;
  Parameter* cqa_wv_ = nullptr;   // [d]
  Parameter* cqa_wq_ = nullptr;   // [d]
  Parameter* cqa_wvq_ = nullptr;  // [d]
  Linear cqa_ffn_;                // 4d -> d
  ConvBlock pred_block1_, pred_block2_;
  Linear head_start_, head_end_;  // d -> 1
};

// Row-softmaxed [2, n] probabilities from the two logit vectors.
Var stacked_probs(Tape& t, const SpanLogitsOut& logits);

// Highest-probability ordered pair: argmax over i <= j of
// p_start[i] * p_end[j]; ties take the smallest i, then the smallest j.
std::pair<Index, Index> decode_span(const StartEndDistribution& p);

}  // namespace emtm
