#include "emtm/profiler.hpp"

#include <algorithm>
#include <chrono>

#include "emtm/errors.hpp"

namespace emtm {

namespace {

// Closed forms per layer kind. Bias adds are folded into the 2x multiply-add
// convention; element-wise passes get an explicit per-element charge:
// layer norm 7 (two stat passes, normalize, affine), softmax 3, relu and
// residual adds 1.

long long linear_cost(Index in, Index out, Index rows) { return 2ll * in * out * rows; }
long long linear_params(Index in, Index out) { return static_cast<long long>(in) * out + out; }

long long conv_cost(Index k, Index cin, Index cout, Index rows) {
  return 2ll * k * cin * cout * rows;
}
long long conv_params(Index k, Index cin, Index cout) {
  return static_cast<long long>(k) * cin * cout + cout;
}

long long norm_cost(Index rows, Index width) { return 7ll * rows * width; }
long long norm_params(Index width) { return 2ll * width; }

long long softmax_cost(Index elements) { return 3ll * elements; }

long long attention_cost(Index rows, Index d, int heads) {
  long long proj = 4 * linear_cost(d, d, rows);               // q, k, v, out
  long long scores = 2ll * rows * rows * d;                   // per-head Q.K^T, summed
  long long scale = static_cast<long long>(heads) * rows * rows;
  long long soft = softmax_cost(static_cast<long long>(heads) * rows * rows);
  long long mix = 2ll * rows * rows * d;                      // attn . V
  return proj + scores + scale + soft + mix;
}
long long attention_params(Index d) { return 4 * linear_params(d, d); }

long long conv_block_cost(Index k, Index d, Index rows) {
  // conv, norm, relu, residual add
  return conv_cost(k, d, d, rows) + norm_cost(rows, d) + 2ll * rows * d;
}
long long conv_block_params(Index k, Index d) { return conv_params(k, d, d) + norm_params(d); }

long long encoder_cost(const ModelConfig& cfg, Index rows) {
  long long total = 0;
  for (int i = 0; i < cfg.encoder_blocks; ++i)
    total += conv_block_cost(cfg.conv_kernel, cfg.d, rows);
  total += attention_cost(rows, cfg.d, cfg.heads);
  total += rows * cfg.d;             // residual around attention
  total += norm_cost(rows, cfg.d);   // final norm
  return total;
}
long long encoder_params(const ModelConfig& cfg) {
  long long total = 0;
  for (int i = 0; i < cfg.encoder_blocks; ++i)
    total += conv_block_params(cfg.conv_kernel, cfg.d);
  return total + attention_params(cfg.d) + norm_params(cfg.d);
}

long long cqa_cost(const ModelConfig& cfg) {
  const Index n = cfg.n, m = cfg.m_max, d = cfg.d;
  long long sim = linear_cost(d, 1, n) + linear_cost(d, 1, m)  // sv, sq
                  + static_cast<long long>(n) * d              // row-wise weight
                  + 2ll * n * m * d                            // cross term
                  + 2ll * n * m;                               // similarity adds
  long long soft = 2 * softmax_cost(static_cast<long long>(n) * m);
  long long mix = 2ll * n * m * d     // query-aware rows
                  + 4ll * n * m * d   // video-aware rows, two matmuls
                  + 2ll * n * d;      // element-wise products
  return sim + soft + mix + linear_cost(4 * d, d, n);
}
long long cqa_params(const ModelConfig& cfg) {
  return 3ll * cfg.d + linear_params(4 * cfg.d, cfg.d);
}

// Everything one grounding model spends from projected features to span
// probabilities, shared encoders included. Positional tables contribute the
// add but no parameters.
void append_shared_pass(const ModelConfig& cfg, const std::string& prefix, bool count_params,
                        std::vector<CostItem>& items) {
  auto maybe = [count_params](long long p) { return count_params ? p : 0ll; };
  items.push_back({prefix + "ffn_v", linear_cost(cfg.d_v, cfg.d, cfg.n),
                   maybe(linear_params(cfg.d_v, cfg.d))});
  items.push_back({prefix + "ffn_q", linear_cost(cfg.d_q, cfg.d, cfg.m_max),
                   maybe(linear_params(cfg.d_q, cfg.d))});
  items.push_back({prefix + "position", (cfg.n + cfg.m_max) * cfg.d, 0});
  items.push_back(
      {prefix + "vis_enc", encoder_cost(cfg, cfg.n), maybe(encoder_params(cfg))});
  items.push_back(
      {prefix + "qry_enc", encoder_cost(cfg, cfg.m_max), maybe(encoder_params(cfg))});
}

void append_private_pass(const ModelConfig& cfg, const std::string& prefix,
                         std::vector<CostItem>& items) {
  items.push_back({prefix + "cqa", cqa_cost(cfg), cqa_params(cfg)});
  items.push_back({prefix + "pred.block1", conv_block_cost(cfg.conv_kernel, cfg.d, cfg.n),
                   conv_block_params(cfg.conv_kernel, cfg.d)});
  items.push_back({prefix + "pred.block2", conv_block_cost(cfg.conv_kernel, cfg.d, cfg.n),
                   conv_block_params(cfg.conv_kernel, cfg.d)});
  items.push_back({prefix + "head_s", linear_cost(cfg.d, 1, cfg.n), linear_params(cfg.d, 1)});
  items.push_back({prefix + "head_e", linear_cost(cfg.d, 1, cfg.n), linear_params(cfg.d, 1)});
  items.push_back({prefix + "span_softmax", softmax_cost(2 * cfg.n), 0});
}

}  // namespace

CostReport count_cost(const ModelConfig& cfg, CostPath path, Index teacher_branches) {
  cfg.validate();
  CostReport report;

  // Deployed student: shared encoders plus its private layers.
  append_shared_pass(cfg, "shared.", true, report.items);
  append_private_pass(cfg, "student.", report.items);

  if (path == CostPath::training) {
    if (teacher_branches < 1)
      throw ContractError("training-path cost needs at least one aggregation branch, got " +
                          std::to_string(teacher_branches));
    // The twin re-runs the shared encoders on the same inputs (spending the
    // flops again but owning no extra weights there) and has private layers
    // of its own.
    append_shared_pass(cfg, "teacher.", false, report.items);
    append_private_pass(cfg, "teacher.", report.items);

    const Index d = cfg.d, n = cfg.n, b = teacher_branches;
    for (Index k : {Index{3}, Index{5}, Index{7}})
      report.items.push_back({"kau.conv" + std::to_string(k), conv_cost(k, d, d, n),
                              conv_params(k, d, d)});
    report.items.push_back({"kau.pool", 3 * d * n + d * cfg.m_max, 0});
    report.items.push_back(
        {"kau.fc", linear_cost(4 * d, 2 * b * n, 1), linear_params(4 * d, 2 * b * n)});
    // Per-position softmax across branches, the weighted mix, and the
    // per-channel renormalization.
    report.items.push_back(
        {"kau.attend", softmax_cost(2 * b * n) + 4ll * b * n + 6ll * n, 0});
  }

  for (const CostItem& item : report.items) {
    report.flops += item.flops;
    report.params += item.params;
  }
  return report;
}

TimingStats measure_time(const std::function<void()>& pass, int runs, int warmups) {
  if (runs < 1) throw ContractError("measure_time needs at least one timed run");
  for (int i = 0; i < warmups; ++i) pass();

  std::vector<double> ms(static_cast<size_t>(runs));
  for (int i = 0; i < runs; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    pass();
    auto t1 = std::chrono::steady_clock::now();
    ms[static_cast<size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(ms.begin(), ms.end());

  TimingStats stats;
  stats.runs = runs;
  const size_t nsz = ms.size();
  stats.median_ms = (nsz % 2 == 1) ? ms[nsz / 2] : 0.5 * (ms[nsz / 2 - 1] + ms[nsz / 2]);
  stats.iqr_ms = ms[(3 * nsz) / 4] - ms[nsz / 4];
  return stats;
}

}  // namespace emtm
