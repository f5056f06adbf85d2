// Command-line front end: synthetic data generation, teacher-output
// unification, co-training, evaluation, and cost profiling. Every command
// resolves its flags into a plain options struct, runs, and records that
// struct (plus input-file digests) in a run manifest, so `rerun` can
// reproduce the outputs byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "emtm/data.hpp"
#include "emtm/errors.hpp"
#include "emtm/grid.hpp"
#include "emtm/metrics.hpp"
#include "emtm/profiler.hpp"
#include "emtm/rng.hpp"
#include "emtm/teacher.hpp"
#include "emtm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emtm;

namespace {

constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Manifest plumbing

std::string digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "' for digesting");
  std::ostringstream os;
  os << in.rdbuf();
  const std::string bytes = os.str();
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes)));
  return hex;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config, const std::vector<std::uint64_t>& seeds,
                    const std::map<std::string, std::string>& inputs) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["config"] = config;
  manifest["seeds"] = seeds;
  manifest["inputs"] = inputs;
  const std::string path = (fs::path(out_dir) / "run_manifest.json").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << manifest.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// Digest every file a dataset split contributes: the manifest plus the
// payload each of its lines names.
void digest_split(const std::string& data_dir, const std::string& split,
                  std::map<std::string, std::string>& inputs) {
  const fs::path dir = fs::path(data_dir) / split;
  const std::string manifest = (dir / "manifest.tsv").string();
  inputs[manifest] = digest_file(manifest);
  std::ifstream in(manifest);
  std::string line;
  std::getline(in, line);  // header
  std::getline(in, line);  // column names
  while (std::getline(in, line)) {
    const std::string id = line.substr(0, line.find('\t'));
    const std::string payload = (dir / (id + ".bin")).string();
    inputs[payload] = digest_file(payload);
  }
}

// ---------------------------------------------------------------------------
// Shared option blocks

struct ModelFlags {
  Index d = 128;
  Index n = 32;
  Index d_v = 64;
  Index d_q = 50;
  Index m_max = 10;
  Index kernel = 7;
  int heads = 8;
  int blocks = 2;
  double dropout = 0.2;
  double sigma = 0.0;
  double alpha = 0.1;
  double temperature = 1.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelFlags, d, n, d_v, d_q, m_max, kernel,
                                                heads, blocks, dropout, sigma, alpha,
                                                temperature)

ModelConfig to_model_config(const ModelFlags& f, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d = f.d;
  cfg.n = f.n;
  cfg.d_v = f.d_v;
  cfg.d_q = f.d_q;
  cfg.m_max = f.m_max;
  cfg.conv_kernel = f.kernel;
  cfg.heads = f.heads;
  cfg.encoder_blocks = f.blocks;
  cfg.dropout = f.dropout;
  cfg.sigma = f.sigma;
  cfg.alpha = f.alpha;
  cfg.temperature = f.temperature;
  cfg.seed = seed;
  return cfg;
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--d", f.d, "Hidden width");
  cmd->add_option("--n", f.n, "Clips per video");
  cmd->add_option("--d-v", f.d_v, "Video feature width");
  cmd->add_option("--d-q", f.d_q, "Query feature width");
  cmd->add_option("--m-max", f.m_max, "Longest query the model accepts");
  cmd->add_option("--kernel", f.kernel, "Encoder conv kernel size");
  cmd->add_option("--heads", f.heads, "Attention heads");
  cmd->add_option("--blocks", f.blocks, "Conv blocks per encoder");
  cmd->add_option("--dropout", f.dropout, "Dropout probability");
  cmd->add_option("--sigma", f.sigma, "Unification bump width in clips (<= 0 means n/20)");
  cmd->add_option("--alpha", f.alpha, "Distillation loss weight");
  cmd->add_option("--temperature", f.temperature, "Distillation softening temperature");
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> parts;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string out;
  std::uint64_t seed = 1;
  Index count = 1000;
  Index val_count = 200;
  Index test_count = 200;
  Index n = 32;
  Index d_v = 64;
  Index d_q = 50;
  Index m_min = 4;
  Index m_max = 10;
  double snr = 1.0;
  double min_frac = 0.2;
  double max_frac = 0.6;
  double min_duration = 30.0;
  double max_duration = 120.0;
  std::string teachers;       // comma-separated format tags
  std::string teacher_noise;  // comma-separated sigmas, broadcast if single
  std::string teacher_bias;   // comma-separated shifts, broadcast if single
  Index proposal_count = 5;
  double sharpness = 1.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthOptions, out, seed, count, val_count,
                                                test_count, n, d_v, d_q, m_min, m_max, snr,
                                                min_frac, max_frac, min_duration, max_duration,
                                                teachers, teacher_noise, teacher_bias,
                                                proposal_count, sharpness)

std::vector<double> parse_broadcast(const std::string& csv, size_t want, double fallback,
                                    const std::string& flag) {
  std::vector<std::string> parts = split_csv(csv);
  std::vector<double> values;
  for (const std::string& p : parts) {
    try {
      values.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw ConfigError(flag + ": '" + p + "' is not a number");
    }
  }
  if (values.empty()) values.assign(want, fallback);
  if (values.size() == 1) values.assign(want, values[0]);
  if (values.size() != want)
    throw ConfigError(flag + " lists " + std::to_string(values.size()) + " values for " +
                      std::to_string(want) + " teachers");
  return values;
}

int run_synth(const SynthOptions& opt) {
  ensure_dir(opt.out);

  SyntheticSpec base;
  base.n = opt.n;
  base.d_v = opt.d_v;
  base.d_q = opt.d_q;
  base.m_min = opt.m_min;
  base.m_max = opt.m_max;
  base.snr = opt.snr;
  base.min_frac = opt.min_frac;
  base.max_frac = opt.max_frac;
  base.min_duration = opt.min_duration;
  base.max_duration = opt.max_duration;

  struct Split {
    const char* name;
    const char* prefix;
    Index count;
  };
  const Split splits[] = {{"train", "tr", opt.count},
                          {"val", "va", opt.val_count},
                          {"test", "te", opt.test_count}};

  std::vector<Sample> train_samples;
  Index total = 0;
  for (const Split& split : splits) {
    SyntheticSpec spec = base;
    spec.count = split.count;
    spec.seed = derive_seed(opt.seed, split.name);
    spec.id_prefix = split.prefix;
    std::vector<Sample> samples = generate_dataset(spec);
    const std::string dir = (fs::path(opt.out) / split.name).string();
    ensure_dir(dir);
    save_features(samples, dir);
    std::printf("%-5s %5lld samples -> %s\n", split.name, static_cast<long long>(split.count),
                dir.c_str());
    total += split.count;
    if (std::string(split.name) == "train") train_samples = std::move(samples);
  }

  const std::vector<std::string> tags = split_csv(opt.teachers);
  const std::vector<double> noises =
      parse_broadcast(opt.teacher_noise, tags.size(), 0.0, "--teacher-noise");
  const std::vector<double> biases =
      parse_broadcast(opt.teacher_bias, tags.size(), 0.0, "--teacher-bias");
  for (size_t f = 0; f < tags.size(); ++f) {
    SimulatedTeacherSpec tspec;
    tspec.format = parse_format_tag(tags[f]);
    tspec.noise = noises[f];
    tspec.bias = biases[f];
    tspec.k = opt.proposal_count;
    tspec.sharpness = opt.sharpness;
    tspec.seed = derive_seed(opt.seed, "teacher:" + tags[f]);

    std::vector<TeacherDumpRecord> records;
    records.reserve(train_samples.size());
    for (const Sample& s : train_samples) {
      ClipGrid grid(opt.n, s.duration);
      records.push_back({s.id, simulate_teacher(s, tspec, grid)});
    }
    const std::string path = (fs::path(opt.out) / ("teacher_" + tags[f] + ".jsonl")).string();
    save_teacher_dump(records, path);
    std::printf("teacher %-11s sigma=%.2f bias=%+.2f -> %s\n", tags[f].c_str(), noises[f],
                biases[f], path.c_str());
  }

  write_manifest(opt.out, "synth", json(opt), {opt.seed}, {});
  std::printf("total %lld samples under %s\n", static_cast<long long>(total), opt.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// unify

struct UnifyOptions {
  std::string dump;
  std::string data;
  std::string split = "train";
  std::string out;
  Index n = 32;
  double sigma = 0.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UnifyOptions, dump, data, split, out, n, sigma)

int run_unify(const UnifyOptions& opt) {
  ensure_dir(opt.out);
  const std::string split_dir = (fs::path(opt.data) / opt.split).string();
  std::vector<Sample> samples = load_features(split_dir);
  std::unordered_map<std::string, const Sample*> by_id;
  for (const Sample& s : samples) by_id[s.id] = &s;

  std::vector<TeacherDumpRecord> records = load_teacher_dump(opt.dump);
  const double sigma = opt.sigma > 0.0 ? opt.sigma : static_cast<double>(opt.n) / 20.0;

  const std::string out_path = (fs::path(opt.out) / "distributions.jsonl").string();
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + out_path + "'");

  for (const TeacherDumpRecord& rec : records) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end())
      throw FormatError("teacher dump names sample '" + rec.id + "' that split '" + opt.split +
                        "' does not contain");
    ClipGrid grid(opt.n, it->second->duration);
    StartEndDistribution dist = unify(rec.output, grid, sigma, &std::cerr);
    dist.validate();
    json line;
    line["id"] = rec.id;
    line["p_start"] = std::vector<double>(dist.p_start.begin(), dist.p_start.end());
    line["p_end"] = std::vector<double>(dist.p_end.begin(), dist.p_end.end());
    out << line.dump() << "\n";
  }

  std::map<std::string, std::string> inputs;
  inputs[opt.dump] = digest_file(opt.dump);
  digest_split(opt.data, opt.split, inputs);
  write_manifest(opt.out, "unify", json(opt), {}, inputs);
  std::printf("unified %zu teacher records over %lld clips -> %s\n", records.size(),
              static_cast<long long>(opt.n), out_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data;
  std::string out;
  std::string teachers;  // comma-separated dump tags under the data dir
  std::string seeds = "1";
  ModelFlags model;
  double lr = 1e-4;
  int batch = 16;
  int epochs = 100;
  int patience = 10;
  bool no_clip = false;
  double clip_norm = 1.0;
  bool no_shared_encoder = false;
  bool no_label_distillation = false;
  std::string preset;
  int threads = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainOptions, data, out, teachers, seeds, model,
                                                lr, batch, epochs, patience, no_clip, clip_norm,
                                                no_shared_encoder, no_label_distillation, preset,
                                                threads)

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& p : split_csv(csv)) {
    try {
      seeds.push_back(std::stoull(p));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + p + "' is not an unsigned integer");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds resolved to an empty list");
  return seeds;
}

struct SeedMetrics {
  std::uint64_t seed;
  MetricReport report;
  int best_epoch;
};

void print_metric_line(std::FILE* f, const char* label, const MetricReport& r) {
  std::fprintf(f, "[metrics] %s miou=%.4f r1_03=%.4f r1_05=%.4f r1_07=%.4f sumacc=%.4f\n",
               label, r.miou, r.r1_at(0.3), r.r1_at(0.5), r.r1_at(0.7), r.sumacc);
}

// Mean and half-range over per-seed values; the summary quotes mean +- spread.
std::pair<double, double> mean_spread(const std::vector<double>& xs) {
  double lo = xs[0], hi = xs[0], sum = 0.0;
  for (double x : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  return {sum / static_cast<double>(xs.size()), (hi - lo) / 2.0};
}

int run_train(const TrainOptions& opt) {
  ensure_dir(opt.out);
  const std::vector<std::uint64_t> seeds = parse_seeds(opt.seeds);
  const std::vector<std::string> tags = split_csv(opt.teachers);

  std::vector<Sample> train_set = load_features((fs::path(opt.data) / "train").string());
  std::vector<Sample> val_set = load_features((fs::path(opt.data) / "val").string());
  std::vector<Sample> test_set = load_features((fs::path(opt.data) / "test").string());

  // Teacher streams, aligned with the training samples.
  std::vector<std::vector<TeacherOutput>> streams;
  std::vector<std::string> dump_paths;
  for (const std::string& tag : tags) {
    const std::string path = (fs::path(opt.data) / ("teacher_" + tag + ".jsonl")).string();
    dump_paths.push_back(path);
    std::vector<TeacherDumpRecord> records = load_teacher_dump(path);
    std::unordered_map<std::string, const TeacherOutput*> by_id;
    for (const TeacherDumpRecord& rec : records) by_id[rec.id] = &rec.output;
    std::vector<TeacherOutput> stream;
    stream.reserve(train_set.size());
    for (const Sample& s : train_set) {
      auto it = by_id.find(s.id);
      if (it == by_id.end())
        throw FormatError("teacher dump '" + path + "' has no record for sample '" + s.id +
                          "'");
      stream.push_back(*it->second);
    }
    streams.push_back(std::move(stream));
  }

  TrainConfig tcfg;
  tcfg.lr = opt.lr;
  tcfg.batch_size = opt.batch;
  tcfg.epochs = opt.epochs;
  tcfg.patience = opt.patience;
  tcfg.clip_gradients = !opt.no_clip;
  tcfg.clip_norm = opt.clip_norm;
  tcfg.use_shared_encoder = !opt.no_shared_encoder;
  tcfg.use_label_distillation = !opt.no_label_distillation;

  const std::string summary_path = (fs::path(opt.out) / "summary.txt").string();
  std::FILE* summary = std::fopen(summary_path.c_str(), "w");
  if (!summary) throw IoError("cannot write '" + summary_path + "'");

  std::vector<SeedMetrics> results;
  for (std::uint64_t seed : seeds) {
    ModelConfig mcfg = to_model_config(opt.model, seed);
    tcfg.seed = seed;
    Trainer trainer(mcfg, tcfg, static_cast<Index>(streams.size()));

    const std::string log_path =
        (fs::path(opt.out) / ("log_seed" + std::to_string(seed) + ".txt")).string();
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write '" + log_path + "'");
    TrainResult result = trainer.fit(train_set, streams, val_set, &log);

    const std::string ckpt_path =
        (fs::path(opt.out) / ("ckpt_seed" + std::to_string(seed) + ".bin")).string();
    save_checkpoint(result.best, ckpt_path);

    MetricReport test = trainer.evaluate_split(test_set, opt.threads);
    results.push_back({seed, test, result.best_epoch});
    std::printf("seed %llu: best epoch %d (val miou %.2f), test miou %.2f, r1@0.7 %.2f\n",
                static_cast<unsigned long long>(seed), result.best_epoch, result.best_val_miou,
                test.miou, test.r1_at(0.7));
    print_metric_line(summary, ("seed=" + std::to_string(seed)).c_str(), test);
  }

  std::vector<double> mious, r07s, sums;
  for (const SeedMetrics& r : results) {
    mious.push_back(r.report.miou);
    r07s.push_back(r.report.r1_at(0.7));
    sums.push_back(r.report.sumacc);
  }
  auto [miou_mean, miou_spread] = mean_spread(mious);
  auto [r07_mean, r07_spread] = mean_spread(r07s);
  auto [sum_mean, sum_spread] = mean_spread(sums);
  std::fprintf(summary,
               "[summary] runs=%zu miou_mean=%.4f miou_spread=%.4f r1_07_mean=%.4f "
               "r1_07_spread=%.4f sumacc_mean=%.4f sumacc_spread=%.4f\n",
               results.size(), miou_mean, miou_spread, r07_mean, r07_spread, sum_mean,
               sum_spread);
  std::fclose(summary);
  std::printf("test miou %.2f +- %.2f, r1@0.7 %.2f +- %.2f over %zu seeds\n", miou_mean,
              miou_spread, r07_mean, r07_spread, results.size());

  std::map<std::string, std::string> inputs;
  for (const char* split : {"train", "val", "test"}) digest_split(opt.data, split, inputs);
  for (const std::string& path : dump_paths) inputs[path] = digest_file(path);
  write_manifest(opt.out, "train", json(opt), seeds, inputs);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string out;
  ModelFlags model;
  int threads = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalOptions, ckpt, data, split, out, model,
                                                threads)

int run_eval(const EvalOptions& opt) {
  ensure_dir(opt.out);
  std::vector<Sample> samples = load_features((fs::path(opt.data) / opt.split).string());
  Checkpoint ckpt = load_checkpoint(opt.ckpt);
  ModelConfig cfg = to_model_config(opt.model, 1);
  StudentRuntime rt = load_student(ckpt, cfg);

  MetricReport report = evaluate_model(*rt.student, cfg, samples, opt.threads);

  const std::string report_path = (fs::path(opt.out) / "report.txt").string();
  std::FILE* f = std::fopen(report_path.c_str(), "w");
  if (!f) throw IoError("cannot write '" + report_path + "'");
  std::fprintf(f, "checkpoint   %s (epoch %d, val miou %.4f)\n", opt.ckpt.c_str(), ckpt.epoch,
               ckpt.val_miou);
  std::fprintf(f, "split        %s (%zu samples)\n", opt.split.c_str(), samples.size());
  std::fprintf(f, "miou         %8.4f\n", report.miou);
  std::fprintf(f, "r1@0.3       %8.4f\n", report.r1_at(0.3));
  std::fprintf(f, "r1@0.5       %8.4f\n", report.r1_at(0.5));
  std::fprintf(f, "r1@0.7       %8.4f\n", report.r1_at(0.7));
  std::fprintf(f, "sumacc       %8.4f  (r1@0.5 + r1@0.7)\n", report.sumacc);
  std::fprintf(f, "sumacc_alt   %8.4f  (r1@0.3 + r1@0.5)\n", report.sumacc_alt);
  print_metric_line(f, ("split=" + opt.split).c_str(), report);
  std::fclose(f);

  print_metric_line(stdout, ("split=" + opt.split).c_str(), report);

  std::map<std::string, std::string> inputs;
  inputs[opt.ckpt] = digest_file(opt.ckpt);
  digest_split(opt.data, opt.split, inputs);
  write_manifest(opt.out, "eval", json(opt), {}, inputs);
  return 0;
}

// ---------------------------------------------------------------------------
// profile

struct ProfileOptions {
  std::string out;
  ModelFlags model;
  std::string path = "inference";
  Index teacher_branches = 4;
  std::string sweep_d;   // comma-separated widths
  std::string quality;   // optional CSV (d,r1_07,miou) merged into the sweep
  bool time = false;     // measured timing goes to stdout only
  int time_runs = 100;
  int time_warmups = 10;
  std::uint64_t time_seed = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProfileOptions, out, model, path,
                                                teacher_branches, sweep_d, quality, time,
                                                time_runs, time_warmups, time_seed)

CostPath parse_cost_path(const std::string& s) {
  if (s == "inference") return CostPath::inference;
  if (s == "training") return CostPath::training;
  throw ConfigError("--path must be 'inference' or 'training', got '" + s + "'");
}

struct QualityRow {
  double r1_07;
  double miou;
};

std::map<Index, QualityRow> load_quality(const std::string& path) {
  std::map<Index, QualityRow> rows;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read quality file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == 'd') continue;  // header or blank
    std::stringstream ss(line);
    std::string d_s, r_s, m_s;
    if (!std::getline(ss, d_s, ',') || !std::getline(ss, r_s, ',') || !std::getline(ss, m_s))
      throw FormatError("quality file line " + std::to_string(lineno) +
                        ": expected d,r1_07,miou");
    try {
      rows[static_cast<Index>(std::stoll(d_s))] = {std::stod(r_s), std::stod(m_s)};
    } catch (const std::exception&) {
      throw FormatError("quality file line " + std::to_string(lineno) +
                        ": non-numeric field in '" + line + "'");
    }
  }
  return rows;
}

int run_profile(const ProfileOptions& opt) {
  ensure_dir(opt.out);
  const CostPath path = parse_cost_path(opt.path);

  ModelConfig cfg = to_model_config(opt.model, 1);
  CostReport report = count_cost(cfg, path, opt.teacher_branches);

  const std::string cost_path = (fs::path(opt.out) / "cost.txt").string();
  std::FILE* f = std::fopen(cost_path.c_str(), "w");
  if (!f) throw IoError("cannot write '" + cost_path + "'");
  std::fprintf(f, "%-22s %14s %12s\n", "layer", "flops", "params");
  for (const CostItem& item : report.items)
    std::fprintf(f, "%-22s %14lld %12lld\n", item.name.c_str(), item.flops, item.params);
  std::fprintf(f, "%-22s %14lld %12lld\n", "total", report.flops, report.params);
  std::fprintf(f, "[cost] path=%s d=%lld flops=%lld params=%lld\n", opt.path.c_str(),
               static_cast<long long>(cfg.d), report.flops, report.params);
  std::fclose(f);
  std::printf("[cost] path=%s d=%lld flops=%lld params=%lld\n", opt.path.c_str(),
              static_cast<long long>(cfg.d), report.flops, report.params);

  std::map<std::string, std::string> inputs;

  const std::vector<std::string> widths = split_csv(opt.sweep_d);
  if (!widths.empty()) {
    std::map<Index, QualityRow> quality;
    if (!opt.quality.empty()) {
      quality = load_quality(opt.quality);
      inputs[opt.quality] = digest_file(opt.quality);
    }
    const std::string csv_path = (fs::path(opt.out) / "sweep.csv").string();
    std::FILE* csv = std::fopen(csv_path.c_str(), "w");
    if (!csv) throw IoError("cannot write '" + csv_path + "'");
    std::fprintf(csv, "d,flops,params,r1_07,miou\n");
    for (const std::string& w : widths) {
      ModelConfig swept = cfg;
      try {
        swept.d = static_cast<Index>(std::stoll(w));
      } catch (const std::exception&) {
        std::fclose(csv);
        throw ConfigError("--sweep-d: '" + w + "' is not an integer");
      }
      CostReport r = count_cost(swept, path, opt.teacher_branches);
      auto q = quality.find(swept.d);
      if (q != quality.end())
        std::fprintf(csv, "%lld,%lld,%lld,%.4f,%.4f\n", static_cast<long long>(swept.d),
                     r.flops, r.params, q->second.r1_07, q->second.miou);
      else
        std::fprintf(csv, "%lld,%lld,%lld,,\n", static_cast<long long>(swept.d), r.flops,
                     r.params);
    }
    std::fclose(csv);
    std::printf("sweep over d={%s} -> %s\n", opt.sweep_d.c_str(), csv_path.c_str());
  }

  if (opt.time) {
    // One in-memory sample, model at the requested width; timing covers
    // features through the decoded span and never lands in any output file.
    SyntheticSpec dspec;
    dspec.count = 1;
    dspec.n = cfg.n;
    dspec.d_v = cfg.d_v;
    dspec.d_q = cfg.d_q;
    dspec.m_min = std::min<Index>(4, cfg.m_max);
    dspec.m_max = cfg.m_max;
    dspec.seed = opt.time_seed;
    std::vector<Sample> samples = generate_dataset(dspec);
    ParameterStore store(opt.time_seed);
    GroundingModel student(store, cfg, "shared.", "student.");
    TimingStats stats = measure_time(
        [&] { (void)predict_sample(student, cfg, samples[0]); }, opt.time_runs,
        opt.time_warmups);
    std::printf("[time] median_ms=%.4f iqr_ms=%.4f runs=%d\n", stats.median_ms, stats.iqr_ms,
                stats.runs);
  }

  write_manifest(opt.out, "profile", json(opt), {}, inputs);
  return 0;
}

// ---------------------------------------------------------------------------
// rerun

int dispatch(const std::string& command, const json& config);

int run_rerun(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read manifest '" + manifest_path + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + manifest_path + "' is not valid JSON: " + e.what());
  }
  std::string command;
  json config;
  std::map<std::string, std::string> inputs;
  try {
    command = manifest.at("command").get<std::string>();
    config = manifest.at("config");
    inputs = manifest.at("inputs").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + manifest_path + "' is missing fields: " + e.what());
  }
  // Outputs only reproduce if the inputs are still the bytes the original
  // run consumed.
  for (const auto& [path, digest] : inputs) {
    const std::string now = digest_file(path);
    if (now != digest)
      throw ConfigError("input '" + path + "' changed since the manifest was written (digest " +
                        now + ", expected " + digest + ")");
  }
  return dispatch(command, config);
}

int dispatch(const std::string& command, const json& config) {
  if (command == "synth") return run_synth(config.get<SynthOptions>());
  if (command == "unify") return run_unify(config.get<UnifyOptions>());
  if (command == "train") return run_train(config.get<TrainOptions>());
  if (command == "eval") return run_eval(config.get<EvalOptions>());
  if (command == "profile") return run_profile(config.get<ProfileOptions>());
  throw FormatError("manifest names unknown command '" + command + "'");
}

// Desk preset: a width-32 configuration that trains in seconds-per-epoch on
// one core. Only fields the user left untouched are overridden.
void apply_desk_preset(const CLI::App* cmd, TrainOptions& opt) {
  if (opt.preset.empty()) return;
  if (opt.preset != "desk")
    throw ConfigError("unknown preset '" + opt.preset + "' (available: desk)");
  auto unset = [cmd](const std::string& flag) { return cmd->count(flag) == 0; };
  if (unset("--d")) opt.model.d = 32;
  if (unset("--lr")) opt.lr = 2e-3;
  if (unset("--batch")) opt.batch = 8;
  if (unset("--epochs")) opt.epochs = 14;
  if (unset("--patience")) opt.patience = 4;
  if (unset("--dropout")) opt.model.dropout = 0.1;
  if (unset("--alpha")) opt.model.alpha = 0.5;
  if (unset("--temperature")) opt.model.temperature = 2.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span grounding by multi-teacher distillation: data synthesis, training, "
               "evaluation, and cost accounting"};
  app.set_version_flag("--version", std::string("emtm ") + kVersion);
  app.require_subcommand(1);

  SynthOptions synth_opt;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset and teacher dumps");
  synth->set_config("--config");
  synth->add_option("--out", synth_opt.out, "Output directory")->required();
  synth->add_option("--seed", synth_opt.seed, "Master seed");
  synth->add_option("--count", synth_opt.count, "Training samples");
  synth->add_option("--val-count", synth_opt.val_count, "Validation samples");
  synth->add_option("--test-count", synth_opt.test_count, "Test samples");
  synth->add_option("--n", synth_opt.n, "Clips per video");
  synth->add_option("--d-v", synth_opt.d_v, "Video feature width");
  synth->add_option("--d-q", synth_opt.d_q, "Query feature width");
  synth->add_option("--m-min", synth_opt.m_min, "Shortest query");
  synth->add_option("--m-max", synth_opt.m_max, "Longest query");
  synth->add_option("--snr", synth_opt.snr, "Pattern strength inside the target span");
  synth->add_option("--min-frac", synth_opt.min_frac, "Shortest span as a duration fraction");
  synth->add_option("--max-frac", synth_opt.max_frac, "Longest span as a duration fraction");
  synth->add_option("--min-duration", synth_opt.min_duration, "Shortest video, seconds");
  synth->add_option("--max-duration", synth_opt.max_duration, "Longest video, seconds");
  synth->add_option("--teachers", synth_opt.teachers,
                    "Teacher formats to simulate (comma list of span, map2d, regression, "
                    "proposals)");
  synth->add_option("--teacher-noise", synth_opt.teacher_noise,
                    "Boundary noise sigma per teacher, clips (single value broadcasts)");
  synth->add_option("--teacher-bias", synth_opt.teacher_bias,
                    "Systematic boundary shift per teacher, clips (single value broadcasts)");
  synth->add_option("--proposal-count", synth_opt.proposal_count,
                    "Candidates per proposal-list teacher");
  synth->add_option("--sharpness", synth_opt.sharpness, "Teacher score decay rate");

  UnifyOptions unify_opt;
  CLI::App* unify_cmd =
      app.add_subcommand("unify", "Convert a teacher dump into boundary distributions");
  unify_cmd->set_config("--config");
  unify_cmd->add_option("--dump", unify_opt.dump, "Teacher dump file")->required();
  unify_cmd->add_option("--data", unify_opt.data, "Dataset directory")->required();
  unify_cmd->add_option("--split", unify_opt.split, "Split the dump covers");
  unify_cmd->add_option("--out", unify_opt.out, "Output directory")->required();
  unify_cmd->add_option("--n", unify_opt.n, "Clips per video");
  unify_cmd->add_option("--sigma", unify_opt.sigma,
                        "Bump width in clips for time-valued formats (<= 0 means n/20)");

  TrainOptions train_opt;
  CLI::App* train_cmd = app.add_subcommand("train", "Co-train the grounding model");
  train_cmd->set_config("--config");
  train_cmd->add_option("--data", train_opt.data, "Dataset directory from synth")->required();
  train_cmd->add_option("--out", train_opt.out, "Output directory")->required();
  train_cmd->add_option("--teachers", train_opt.teachers,
                        "Teacher dump tags to distill from (comma list)");
  train_cmd->add_option("--seeds", train_opt.seeds, "Comma list; one run per seed");
  add_model_flags(train_cmd, train_opt.model);
  train_cmd->add_option("--lr", train_opt.lr, "Learning rate");
  train_cmd->add_option("--batch", train_opt.batch, "Batch size");
  train_cmd->add_option("--epochs", train_opt.epochs, "Epoch cap");
  train_cmd->add_option("--patience", train_opt.patience,
                        "Epochs without validation improvement before stopping");
  train_cmd->add_flag("--no-clip", train_opt.no_clip, "Disable gradient clipping");
  train_cmd->add_option("--clip-norm", train_opt.clip_norm, "Global gradient norm cap");
  train_cmd->add_flag("--no-shared-encoder", train_opt.no_shared_encoder,
                      "Drop the co-trained twin and its loss");
  train_cmd->add_flag("--no-label-distillation", train_opt.no_label_distillation,
                      "Drop the teacher ensemble and distillation losses");
  train_cmd->add_option("--preset", train_opt.preset, "Configuration preset (desk)");
  train_cmd->add_option("--threads", train_opt.threads, "Evaluation worker cap");

  EvalOptions eval_opt;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  eval_cmd->set_config("--config");
  eval_cmd->add_option("--ckpt", eval_opt.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_opt.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_opt.split, "Split to score");
  eval_cmd->add_option("--out", eval_opt.out, "Output directory")->required();
  add_model_flags(eval_cmd, eval_opt.model);
  eval_cmd->add_option("--threads", eval_opt.threads, "Evaluation worker cap");

  ProfileOptions profile_opt;
  CLI::App* profile_cmd =
      app.add_subcommand("profile", "Report analytic cost and optional wall-clock timing");
  profile_cmd->set_config("--config");
  profile_cmd->add_option("--out", profile_opt.out, "Output directory")->required();
  add_model_flags(profile_cmd, profile_opt.model);
  profile_cmd->add_option("--path", profile_opt.path, "Cost path: inference or training");
  profile_cmd->add_option("--teacher-branches", profile_opt.teacher_branches,
                          "Aggregation branches on the training path");
  profile_cmd->add_option("--sweep-d", profile_opt.sweep_d,
                          "Comma list of hidden widths for sweep.csv");
  profile_cmd->add_option("--quality", profile_opt.quality,
                          "CSV of d,r1_07,miou rows to merge into the sweep");
  profile_cmd->add_flag("--time", profile_opt.time,
                        "Measure a single-sample pass (stdout only)");
  profile_cmd->add_option("--time-runs", profile_opt.time_runs, "Timed passes");
  profile_cmd->add_option("--time-warmups", profile_opt.time_warmups, "Untimed passes first");
  profile_cmd->add_option("--time-seed", profile_opt.time_seed,
                          "Seed for the timing sample and weights");

  std::string manifest_path;
  CLI::App* rerun_cmd = app.add_subcommand("rerun", "Reproduce a recorded run from its manifest");
  rerun_cmd->add_option("manifest", manifest_path, "run_manifest.json from a previous run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  // Exit codes: 0 success, 2 command-line parse error, 3 invalid
  // configuration, 4 bad input data or files, 5 numerical abort, 1 anything
  // else.
  try {
    if (synth->parsed()) return run_synth(synth_opt);
    if (unify_cmd->parsed()) return run_unify(unify_opt);
    if (train_cmd->parsed()) {
      apply_desk_preset(train_cmd, train_opt);
      return run_train(train_opt);
    }
    if (eval_cmd->parsed()) return run_eval(eval_opt);
    if (profile_cmd->parsed()) return run_profile(profile_opt);
    if (rerun_cmd->parsed()) return run_rerun(manifest_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
