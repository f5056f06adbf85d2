#include "emtm/layers.hpp"

#include <cmath>

#include "emtm/errors.hpp"

namespace emtm {

namespace op = ops;

Tensor xavier_uniform(Rng& rng, const Shape& shape, Index fan_in, Index fan_out) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

namespace {

Tensor zeros_init(Rng&, const Shape& shape) { return Tensor::zeros(shape); }
Tensor ones_init(Rng&, const Shape& shape) { return Tensor::full(shape, 1.0); }

}  // namespace

Linear Linear::create(ParameterStore& store, const std::string& name, Index in, Index out) {
  Linear l;
  l.weight = &store.get_or_create(name + ".w", {in, out}, [in, out](Rng& r, const Shape& s) {
    return xavier_uniform(r, s, in, out);
  });
  l.bias = &store.get_or_create(name + ".b", {out}, zeros_init);
  return l;
}

Var Linear::operator()(Tape& t, Var x) const {
  return op::add_rowvec(op::matmul(x, t.param(*weight)), t.param(*bias));
}

Conv1d Conv1d::create(ParameterStore& store, const std::string& name, Index kernel, Index in,
                      Index out) {
  if (kernel <= 0 || kernel % 2 == 0)
    throw ConfigError("conv kernel must be odd and positive, got " + std::to_string(kernel));
  Conv1d c;
  Index fan_in = kernel * in, fan_out = kernel * out;
  c.weight = &store.get_or_create(name + ".w", {kernel, in, out},
                                  [fan_in, fan_out](Rng& r, const Shape& s) {
                                    return xavier_uniform(r, s, fan_in, fan_out);
                                  });
  c.bias = &store.get_or_create(name + ".b", {out}, zeros_init);
  return c;
}

Var Conv1d::operator()(Tape& t, Var x) const {
  return op::conv1d(x, t.param(*weight), t.param(*bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, Index width) {
  LayerNorm n;
  n.gain = &store.get_or_create(name + ".gain", {width}, ones_init);
  n.bias = &store.get_or_create(name + ".bias", {width}, zeros_init);
  return n;
}

Var LayerNorm::operator()(Tape& t, Var x) const {
  return op::layer_norm(x, t.param(*gain), t.param(*bias));
}

MultiHeadSelfAttention MultiHeadSelfAttention::create(ParameterStore& store,
                                                      const std::string& name, Index d,
                                                      int heads) {
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  MultiHeadSelfAttention m;
  m.heads = heads;
  m.query = Linear::create(store, name + ".q", d, d);
  m.key = Linear::create(store, name + ".k", d, d);
  m.value = Linear::create(store, name + ".v", d, d);
  m.out = Linear::create(store, name + ".o", d, d);
  return m;
}

Var MultiHeadSelfAttention::operator()(Tape& t, Var x) const {
  Index d = x.value().dim(1);
  Index dh = d / heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = query(t, x), k = key(t, x), v = value(t, x);
  std::vector<Var> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = op::slice_cols(q, h * dh, dh);
    Var kh = op::slice_cols(k, h * dh, dh);
    Var vh = op::slice_cols(v, h * dh, dh);
    Var scores = op::scale(op::matmul(qh, op::transpose(kh)), inv_sqrt);
    Var attn = op::softmax(scores, 1);
    ctx.push_back(op::matmul(attn, vh));
  }
  return out(t, op::concat(ctx, 1));
}

ConvBlock ConvBlock::create(ParameterStore& store, const std::string& name, Index kernel,
                            Index d) {
  ConvBlock b;
  b.conv = Conv1d::create(store, name + ".conv", kernel, d, d);
  b.norm = LayerNorm::create(store, name + ".ln", d);
  return b;
}

Var ConvBlock::operator()(Tape& t, Var x, double dropout_p, Rng* dropout_rng) const {
  Var h = op::relu(norm(t, conv(t, x)));
  return op::add(x, op::dropout(h, dropout_p, dropout_rng));
}

SequenceEncoder SequenceEncoder::create(ParameterStore& store, const std::string& name, Index d,
                                        Index kernel, int heads, int num_blocks) {
  if (num_blocks <= 0) throw ConfigError("encoder needs at least one block");
  SequenceEncoder e;
  for (int i = 0; i < num_blocks; ++i)
    e.blocks.push_back(ConvBlock::create(store, name + ".block" + std::to_string(i), kernel, d));
  e.attn = MultiHeadSelfAttention::create(store, name + ".attn", d, heads);
  e.attn_norm = LayerNorm::create(store, name + ".attn_ln", d);
  return e;
}

Var SequenceEncoder::operator()(Tape& t, Var x, double dropout_p, Rng* dropout_rng) const {
  Var h = x;
  for (const ConvBlock& b : blocks) h = b(t, h, dropout_p, dropout_rng);
  Var a = op::dropout(attn(t, h), dropout_p, dropout_rng);
  return attn_norm(t, op::add(h, a));
}

PositionalEmbedding PositionalEmbedding::create(ParameterStore& store, const std::string& name,
                                                Index max_len, Index d) {
  PositionalEmbedding p;
  p.table = &store.get_or_create(name + ".pos", {max_len, d}, [](Rng& r, const Shape& s) {
    Tensor t(s);
    for (Index i = 0; i < t.size(); ++i) t[i] = r.normal(0.0, 0.02);
    return t;
  });
  return p;
}

Var PositionalEmbedding::slice(Tape& t, Index len) const {
  if (len > table->value.dim(0))
    throw DimensionError("sequence length " + std::to_string(len) +
                         " exceeds position table size " + std::to_string(table->value.dim(0)));
  return op::slice_axis0(t.param(*table), 0, len);
}

}  // namespace emtm
