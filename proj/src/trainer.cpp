#include "emtm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json.hpp"

#include "emtm/errors.hpp"
#include "emtm/grid.hpp"
#include "emtm/rng.hpp"
#include "emtm/tape.hpp"
#include "emtm/teacher.hpp"

namespace emtm {

void adam_step(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, long long step,
               const AdamConfig& cfg) {
  if (grad.shape() != value.shape() || m.shape() != value.shape() || v.shape() != value.shape())
    throw ContractError("adam_step: moment or gradient shape does not match parameter " +
                        shape_to_string(value.shape()));
  if (step < 1) throw ContractError("adam_step: step count must be 1-based");
  m.array() = cfg.beta1 * m.array() + (1.0 - cfg.beta1) * grad.array();
  v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  value.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  for (const Parameter* p : static_cast<const ParameterStore&>(store).all()) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::step() {
  std::vector<Parameter*> params = store_->all();
  if (params.size() != m_.size())
    throw ContractError("optimizer was built over " + std::to_string(m_.size()) +
                        " parameters but the store now holds " + std::to_string(params.size()));
  ++t_;
  for (size_t i = 0; i < params.size(); ++i)
    adam_step(params[i]->value, params[i]->grad, m_[i], v_[i], t_, cfg_);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
  if (batch_size < 1)
    throw ConfigError("batch size must be at least 1, got " + std::to_string(batch_size));
  if (epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(epochs));
  if (patience < 1)
    throw ConfigError("patience must be at least 1, got " + std::to_string(patience));
  if (clip_gradients && !(clip_norm > 0.0))
    throw ConfigError("clip norm must be positive, got " + std::to_string(clip_norm));
}

std::string config_fingerprint(const ModelConfig& cfg) {
  // Only fields that fix tensor shapes participate; runtime knobs (dropout,
  // alpha, temperature, sigma, seed) do not invalidate a checkpoint.
  std::ostringstream os;
  os << "d=" << cfg.d << ";n=" << cfg.n << ";d_v=" << cfg.d_v << ";d_q=" << cfg.d_q
     << ";m_max=" << cfg.m_max << ";kernel=" << cfg.conv_kernel << ";heads=" << cfg.heads
     << ";blocks=" << cfg.encoder_blocks;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(os.str())));
  return hex;
}

Checkpoint snapshot_store(const ParameterStore& store, const ModelConfig& cfg, int epoch,
                          double val_miou) {
  Checkpoint ckpt;
  ckpt.fingerprint = config_fingerprint(cfg);
  ckpt.epoch = epoch;
  ckpt.val_miou = val_miou;
  for (const Parameter* p : store.all()) ckpt.params.emplace_back(p->name, p->value);
  return ckpt;
}

void restore_store(ParameterStore& store, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, value] : ckpt.params) by_name[name] = &value;
  for (Parameter* p : store.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw FormatError("checkpoint has no parameter '" + p->name + "'");
    if (it->second->shape() != p->value.shape())
      throw FormatError("checkpoint parameter '" + p->name + "' is " +
                        shape_to_string(it->second->shape()) + ", expected " +
                        shape_to_string(p->value.shape()));
    p->value = *it->second;
  }
}

namespace {

constexpr const char* kCheckpointMagic = "EMTMCKPT 1";

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");

  nlohmann::json header;
  header["fingerprint"] = ckpt.fingerprint;
  header["epoch"] = ckpt.epoch;
  header["val_miou"] = ckpt.val_miou;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, value] : ckpt.params) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = value.shape();
    params.push_back(std::move(entry));
  }
  header["params"] = std::move(params);

  out << kCheckpointMagic << "\n" << header.dump() << "\n";
  for (const auto& [name, value] : ckpt.params) {
    out.write(reinterpret_cast<const char*>(value.data()),
              static_cast<std::streamsize>(value.size()) *
                  static_cast<std::streamsize>(sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");

  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic)
    throw FormatError("'" + path + "' is not a checkpoint (bad magic line)");
  std::string header_line;
  if (!std::getline(in, header_line))
    throw FormatError("checkpoint '" + path + "' is missing its header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "' header is not valid JSON: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.fingerprint = header.at("fingerprint").get<std::string>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.val_miou = header.at("val_miou").get<double>();
    for (const auto& entry : header.at("params")) {
      std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      Tensor value = Tensor::zeros(shape);
      in.read(reinterpret_cast<char*>(value.data()),
              static_cast<std::streamsize>(value.size()) *
                  static_cast<std::streamsize>(sizeof(double)));
      if (!in)
        throw FormatError("checkpoint '" + path + "' is truncated inside parameter '" + name +
                          "'");
      ckpt.params.emplace_back(std::move(name), std::move(value));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint '" + path + "' header is malformed: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("checkpoint '" + path + "' has trailing bytes");
  return ckpt;
}

Prediction predict_sample(const GroundingModel& student, const ModelConfig& cfg,
                          const Sample& sample) {
  Tape t;
  t.set_grad_enabled(false);
  SpanLogitsOut logits = student.forward(t, sample.video, sample.query, nullptr);
  Var probs = stacked_probs(t, logits);

  Prediction pred;
  pred.dist = unstack(probs.value());
  auto [i, j] = decode_span(pred.dist);
  pred.start_index = i;
  pred.end_index = j;
  ClipGrid grid(cfg.n, sample.duration);
  pred.t_start = grid.index_to_time(i);
  pred.t_end = grid.index_to_time(j);
  return pred;
}

StudentRuntime load_student(const Checkpoint& ckpt, const ModelConfig& cfg) {
  if (ckpt.fingerprint != config_fingerprint(cfg))
    throw ConfigError("checkpoint fingerprint " + ckpt.fingerprint +
                      " does not match the requested architecture " + config_fingerprint(cfg));
  StudentRuntime rt;
  rt.cfg = cfg;
  rt.store = std::make_unique<ParameterStore>(cfg.seed);
  rt.student = std::make_unique<GroundingModel>(*rt.store, cfg, "shared.", "student.");
  restore_store(*rt.store, ckpt);
  return rt;
}

Prediction infer(const Checkpoint& ckpt, const ModelConfig& cfg, const Sample& sample) {
  StudentRuntime rt = load_student(ckpt, cfg);
  return predict_sample(*rt.student, cfg, sample);
}

MetricReport evaluate_model(const GroundingModel& student, const ModelConfig& cfg,
                            const std::vector<Sample>& samples, int threads) {
  std::vector<std::pair<double, double>> preds(samples.size()), gts(samples.size());
  auto score_range = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < samples.size(); i += step) {
      Prediction p = predict_sample(student, cfg, samples[i]);
      preds[i] = {p.t_start, p.t_end};
      gts[i] = {samples[i].t_start, samples[i].t_end};
    }
  };
  const int workers =
      std::max(1, std::min(threads, static_cast<int>(std::min<size_t>(samples.size(), 64))));
  if (workers == 1) {
    score_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(score_range, static_cast<size_t>(w), static_cast<size_t>(workers));
    for (std::thread& th : pool) th.join();
  }
  return evaluate(preds, gts);
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, Index offline_teachers)
    : mcfg_(mcfg), tcfg_(tcfg), offline_teachers_(offline_teachers), store_(mcfg.seed) {
  mcfg_.validate();
  tcfg_.validate();
  if (offline_teachers_ < 0)
    throw ConfigError("negative teacher count " + std::to_string(offline_teachers_));
  models_ = build_shared_models(store_, mcfg_);
  if (tcfg_.use_label_distillation) {
    bank_size_ = offline_teachers_ + (tcfg_.use_shared_encoder ? 1 : 0);
    if (bank_size_ < 1)
      throw ConfigError(
          "label distillation needs at least one aggregation branch: provide teacher outputs "
          "or enable the shared encoder");
    kau_ = std::make_unique<KnowledgeAggregationUnit>(store_, mcfg_.d, mcfg_.n, bank_size_);
  }
}

namespace {

// NaN and Inf both poison the run; name the first bad term so the abort points
// at the loss that diverged rather than the sum.
void require_finite(const LossBreakdown& lb, int epoch, const std::string& sample_id) {
  const char* term = nullptr;
  if (!std::isfinite(lb.l_st)) term = "l_st";
  else if (!std::isfinite(lb.l_tc)) term = "l_tc";
  else if (!std::isfinite(lb.l_ens)) term = "l_ens";
  else if (!std::isfinite(lb.l_dis)) term = "l_dis";
  else if (!std::isfinite(lb.total)) term = "total";
  if (term)
    throw NumericalError("training aborted: " + std::string(term) +
                         " is not finite at epoch " + std::to_string(epoch) + " on sample '" +
                         sample_id + "'");
}

void write_log_line(std::ostream& os, const EpochLog& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epoch=%d l_st=%.6f l_tc=%.6f l_ens=%.6f l_dis=%.6f total=%.6f "
                "val_miou=%.4f val_r1_03=%.4f val_r1_05=%.4f val_r1_07=%.4f",
                row.epoch, row.l_st, row.l_tc, row.l_ens, row.l_dis, row.total, row.val_miou,
                row.val_r1_03, row.val_r1_05, row.val_r1_07);
  os << buf << "\n";
}

}  // namespace

TrainResult Trainer::fit(const std::vector<Sample>& train_set,
                         const std::vector<std::vector<TeacherOutput>>& teacher_outputs,
                         const std::vector<Sample>& val_set, std::ostream* log_stream) {
  if (train_set.empty()) throw ContractError("training set is empty");
  if (val_set.empty()) throw ContractError("validation set is empty");
  if (static_cast<Index>(teacher_outputs.size()) != offline_teachers_)
    throw ContractError("trainer was sized for " + std::to_string(offline_teachers_) +
                        " teachers but fit() received " +
                        std::to_string(teacher_outputs.size()));
  for (const auto& stream : teacher_outputs) {
    if (stream.size() != train_set.size())
      throw ContractError("teacher stream covers " + std::to_string(stream.size()) +
                          " samples, training set has " + std::to_string(train_set.size()));
  }

  // Teachers are fixed during training; unify their raw outputs once.
  const size_t count = train_set.size();
  std::vector<TeacherBank> banks(count);
  std::vector<HardLabels> labels(count);
  for (size_t i = 0; i < count; ++i) {
    const Sample& s = train_set[i];
    s.validate();
    ClipGrid grid(mcfg_.n, s.duration);
    for (const auto& stream : teacher_outputs)
      banks[i].distributions.push_back(unify(stream[i], grid, mcfg_.sigma_clips()));
    labels[i] = HardLabels{grid.time_to_index(s.t_start), grid.time_to_index(s.t_end), mcfg_.n};
    labels[i].validate();
  }

  Rng shuffle_rng(derive_seed(tcfg_.seed, "shuffle"));
  Rng dropout_rng(derive_seed(tcfg_.seed, "dropout"));
  Adam adam(store_, {tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.eps});

  StepOptions opts;
  opts.use_shared_encoder = tcfg_.use_shared_encoder;
  opts.use_label_distillation = tcfg_.use_label_distillation;
  opts.dropout_rng = mcfg_.dropout > 0.0 ? &dropout_rng : nullptr;

  TrainResult result;
  result.best_val_miou = -std::numeric_limits<double>::infinity();
  int stale_epochs = 0;

  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = i;

  for (int epoch = 1; epoch <= tcfg_.epochs; ++epoch) {
    for (size_t i = count; i > 1; --i) {
      size_t j = static_cast<size_t>(shuffle_rng.below(i));
      std::swap(order[i - 1], order[j]);
    }

    LossBreakdown sums;
    for (size_t begin = 0; begin < count; begin += static_cast<size_t>(tcfg_.batch_size)) {
      const size_t end = std::min(count, begin + static_cast<size_t>(tcfg_.batch_size));
      store_.zero_grads();
      for (size_t pos = begin; pos < end; ++pos) {
        const size_t i = order[pos];
        const Sample& s = train_set[i];
        Tape t;
        StepGraph graph = build_step_graph(t, models_, kau_.get(), s.video, s.query, banks[i],
                                           labels[i], mcfg_, opts);
        LossBreakdown lb = graph.values(mcfg_.alpha);
        require_finite(lb, epoch, s.id);
        sums.l_st += lb.l_st;
        sums.l_tc += lb.l_tc;
        sums.l_ens += lb.l_ens;
        sums.l_dis += lb.l_dis;
        sums.total += lb.total;
        t.backward(graph.total);
      }
      store_.scale_grads(1.0 / static_cast<double>(end - begin));
      if (tcfg_.clip_gradients) {
        const double norm = store_.grad_norm();
        if (norm > tcfg_.clip_norm) store_.scale_grads(tcfg_.clip_norm / norm);
      }
      adam.step();
    }

    MetricReport val = evaluate_split(val_set);
    EpochLog row;
    row.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(count);
    row.l_st = sums.l_st * inv;
    row.l_tc = sums.l_tc * inv;
    row.l_ens = sums.l_ens * inv;
    row.l_dis = sums.l_dis * inv;
    row.total = sums.total * inv;
    row.val_miou = val.miou;
    row.val_r1_03 = val.r1_at(0.3);
    row.val_r1_05 = val.r1_at(0.5);
    row.val_r1_07 = val.r1_at(0.7);
    result.log.push_back(row);
    if (log_stream) write_log_line(*log_stream, row);

    if (val.miou > result.best_val_miou) {
      result.best_val_miou = val.miou;
      result.best_epoch = epoch;
      result.best = snapshot_store(store_, mcfg_, epoch, val.miou);
      stale_epochs = 0;
    } else if (++stale_epochs >= tcfg_.patience) {
      break;
    }
  }

  // Leave the best weights live so predict() serves the returned checkpoint.
  restore_store(store_, result.best);
  return result;
}

Prediction Trainer::predict(const Sample& sample) const {
  return predict_sample(*models_.student, mcfg_, sample);
}

MetricReport Trainer::evaluate_split(const std::vector<Sample>& samples, int threads) const {
  return evaluate_model(*models_.student, mcfg_, samples, threads);
}

}  // namespace emtm
