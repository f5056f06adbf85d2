#pragma once

#include <string>
#include <vector>

#include "emtm/ops.hpp"
#include "emtm/params.hpp"
#include "emtm/tape.hpp"

// Parameterized layers. Each layer owns nothing: parameters live in a
// ParameterStore keyed by name, so two layers built from the same store with
// the same name prefix share weights by construction.
namespace emtm {

Tensor xavier_uniform(Rng& rng, const Shape& shape, Index fan_in, Index fan_out);

struct Linear {
  Parameter* weight = nullptr;  // [in, out]
  Parameter* bias = nullptr;    // [out]

  static Linear create(ParameterStore& store, const std::string& name, Index in, Index out);
  Var operator()(Tape& t, Var x) const;  // x [rows, in]
  Index param_count() const { return weight->value.size() + bias->value.size(); }
};

struct Conv1d {
  Parameter* weight = nullptr;  // [kernel, in, out]
  Parameter* bias = nullptr;    // [out]

  static Conv1d create(ParameterStore& store, const std::string& name, Index kernel, Index in,
                       Index out);
  Var operator()(Tape& t, Var x) const;  // x [n, in]
  Index param_count() const { return weight->value.size() + bias->value.size(); }
};

struct LayerNorm {
  Parameter* gain = nullptr;  // [width], ones at init
  Parameter* bias = nullptr;  // [width], zeros at init

  static LayerNorm create(ParameterStore& store, const std::string& name, Index width);
  Var operator()(Tape& t, Var x) const;
  Index param_count() const { return gain->value.size() + bias->value.size(); }
};

// Scaled dot-product self-attention with h heads over a [n, d] sequence.
// Composed from the primitive ops, so its gradient needs no bespoke code.
struct MultiHeadSelfAttention {
  Linear query, key, value, out;
  int heads = 1;

  static MultiHeadSelfAttention create(ParameterStore& store, const std::string& name, Index d,
                                       int heads);
  Var operator()(Tape& t, Var x) const;
};

// conv -> layer-norm -> relu -> dropout, with a residual skip.
struct ConvBlock {
  Conv1d conv;
  LayerNorm norm;

  static ConvBlock create(ParameterStore& store, const std::string& name, Index kernel, Index d);
  Var operator()(Tape& t, Var x, double dropout_p, Rng* dropout_rng) const;
};

// Stack of convolutional blocks followed by one residual self-attention
// block. Shared by the video and query towers.
struct SequenceEncoder {
  std::vector<ConvBlock> blocks;
  MultiHeadSelfAttention attn;
  LayerNorm attn_norm;

  static SequenceEncoder create(ParameterStore& store, const std::string& name, Index d,
                                Index kernel, int heads, int num_blocks);
  Var operator()(Tape& t, Var x, double dropout_p, Rng* dropout_rng) const;
};

// Learned additive position table, sliced to the sequence length at use.
struct PositionalEmbedding {
  Parameter* table = nullptr;  // [max_len, d]

  static PositionalEmbedding create(ParameterStore& store, const std::string& name, Index max_len,
                                    Index d);
  Var slice(Tape& t, Index len) const;
};

}  // namespace emtm
