#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "emtm/grid.hpp"
#include "emtm/rng.hpp"
#include "emtm/teacher.hpp"
#include "emtm/tensor.hpp"

namespace emtm {

// One grounding example: clip features, query token features, and the target
// span in seconds.
struct Sample {
  std::string id;
  Tensor video;  // [n, d_v]
  Tensor query;  // [m, d_q]
  double t_start = 0.0;
  double t_end = 0.0;
  double duration = 0.0;

  Index n() const { return video.dim(0); }
  Index m() const { return query.dim(0); }
  void validate() const;  // 0 <= t_start < t_end <= duration, rank-2 features
};

// Recipe for a synthetic split. Each sample hides a per-sample pattern
// vector inside its labeled segment; the query carries a projection of the
// same pattern, so queries stay discriminative across samples.
struct SyntheticSpec {
  Index count = 1000;
  Index n = 32;
  Index d_v = 64;
  Index d_q = 50;
  Index m_min = 4;
  Index m_max = 10;
  double snr = 1.0;        // pattern magnitude relative to unit feature noise
  double min_frac = 0.2;   // segment length as a fraction of the duration
  double max_frac = 0.6;
  double min_duration = 30.0;  // seconds
  double max_duration = 120.0;
  std::uint64_t seed = 1;
  std::string id_prefix = "s";

  void validate() const;
};

std::vector<Sample> generate_dataset(const SyntheticSpec& spec);

// A configurable stand-in for one pretrained teacher. The ground-truth
// boundaries are perturbed by bias + Gaussian noise (both in clip units),
// then emitted in the requested output format.
struct SimulatedTeacherSpec {
  TeacherFormat format = TeacherFormat::regression;
  double noise = 0.0;      // boundary noise sigma, clips
  double bias = 0.0;       // systematic boundary shift, clips
  Index k = 5;             // candidates for the proposal format
  double sharpness = 1.0;  // score/logit decay per squared clip of error
  std::uint64_t seed = 7;

  void validate() const;
};

TeacherOutput simulate_teacher(const Sample& sample, const SimulatedTeacherSpec& tspec,
                               const ClipGrid& grid);

// Feature files: one text manifest per directory plus one little-endian
// binary payload per sample (video rows then query rows). Round-trips are
// bit-identical; the layout is documented in docs/FORMATS.md.
void save_features(const std::vector<Sample>& samples, const std::filesystem::path& dir);
std::vector<Sample> load_features(const std::filesystem::path& dir);

// Teacher prediction files: one JSON record per line carrying the sample id,
// a format tag, and the payload arrays.
struct TeacherDumpRecord {
  std::string id;
  TeacherOutput output;
};

void save_teacher_dump(const std::vector<TeacherDumpRecord>& records,
                       const std::filesystem::path& file);
std::vector<TeacherDumpRecord> load_teacher_dump(const std::filesystem::path& file);

}  // namespace emtm
