#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "emtm/data.hpp"
#include "emtm/distill.hpp"
#include "emtm/kau.hpp"
#include "emtm/metrics.hpp"
#include "emtm/params.hpp"
#include "emtm/student.hpp"

namespace emtm {

// Adam with bias correction. `step` is 1-based; the caller owns the moment
// buffers so the same routine serves tests and the batched optimizer.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, long long step,
               const AdamConfig& cfg);

// Optimizer over every parameter registered in a store. Reads the grads the
// backward pass accumulated; the caller zeroes them between batches.
class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig cfg);

  void step();
  long long steps() const { return t_; }

 private:
  ParameterStore* store_;
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 16;
  int epochs = 100;
  int patience = 10;  // epochs without validation improvement before stopping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool use_shared_encoder = true;
  bool use_label_distillation = true;
  bool clip_gradients = true;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;  // shuffle and dropout streams; weight init uses the model seed

  void validate() const;
};

// Full parameter snapshot plus enough metadata to refuse a mismatched load.
// The fingerprint hashes the architecture-determining config fields only, so
// a checkpoint stays loadable across runtime knobs like dropout or alpha.
struct Checkpoint {
  std::string fingerprint;
  int epoch = 0;
  double val_miou = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;  // store insertion order
};

std::string config_fingerprint(const ModelConfig& cfg);
Checkpoint snapshot_store(const ParameterStore& store, const ModelConfig& cfg, int epoch,
                          double val_miou);
// Every parameter in the store must appear in the checkpoint with a matching
// shape; checkpoint entries the store does not know are ignored, which lets a
// student-only store load a full co-training snapshot.
void restore_store(ParameterStore& store, const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Decoded answer for one sample: grid indices, their clip-center times, and
// the distributions they were read from.
struct Prediction {
  double t_start = 0.0;
  double t_end = 0.0;
  Index start_index = 0;
  Index end_index = 0;
  StartEndDistribution dist;
};

// Grad-free student-only forward pass: dropout off, nothing outside the
// deployed model runs.
Prediction predict_sample(const GroundingModel& student, const ModelConfig& cfg,
                          const Sample& sample);

// A deployable student: its own store with the checkpoint weights loaded.
// Heap members keep parameter pointers stable if the runtime moves.
struct StudentRuntime {
  std::unique_ptr<ParameterStore> store;
  std::unique_ptr<GroundingModel> student;
  ModelConfig cfg;
};

StudentRuntime load_student(const Checkpoint& ckpt, const ModelConfig& cfg);

// Restores a checkpoint into a fresh student-only store and predicts.
Prediction infer(const Checkpoint& ckpt, const ModelConfig& cfg, const Sample& sample);

// Scores decoded spans against ground truth for a whole split. Prediction is
// per-sample independent, so `threads` workers may share the read-only
// parameters; the result does not depend on the thread count.
MetricReport evaluate_model(const GroundingModel& student, const ModelConfig& cfg,
                            const std::vector<Sample>& samples, int threads = 1);

struct EpochLog {
  int epoch = 0;
  double l_st = 0.0, l_tc = 0.0, l_ens = 0.0, l_dis = 0.0, total = 0.0;  // epoch means
  double val_miou = 0.0;
  double val_r1_03 = 0.0, val_r1_05 = 0.0, val_r1_07 = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_miou = 0.0;
};

// Owns the parameter store and the co-trained models for one training run.
// Not movable: layers keep pointers into the store.
class Trainer {
 public:
  // offline_teachers is the number of pre-computed teacher streams fit() will
  // be given; the aggregation unit is sized for them (plus the twin when the
  // shared encoder is on) up front.
  Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, Index offline_teachers);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // teacher_outputs[f][i] is teacher f's raw output for train_set[i].
  // Unified once up front; the loop minimizes the combined objective with
  // Adam, validates mIoU each epoch, early-stops on patience, and leaves the
  // best-epoch weights in the store.
  TrainResult fit(const std::vector<Sample>& train_set,
                  const std::vector<std::vector<TeacherOutput>>& teacher_outputs,
                  const std::vector<Sample>& val_set, std::ostream* log_stream = nullptr);

  Prediction predict(const Sample& sample) const;
  MetricReport evaluate_split(const std::vector<Sample>& samples, int threads = 1) const;

  ParameterStore& store() { return store_; }
  const GroundingModel& student() const { return *models_.student; }
  const ModelConfig& model_config() const { return mcfg_; }
  Index bank_size() const { return bank_size_; }

 private:
  ModelConfig mcfg_;
  TrainConfig tcfg_;
  Index offline_teachers_;
  Index bank_size_ = 0;
  ParameterStore store_;
  SharedModels models_;
  std::unique_ptr<KnowledgeAggregationUnit> kau_;
};

}  // namespace emtm
