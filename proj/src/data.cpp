#include "emtm/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "json.hpp"

#include "emtm/errors.hpp"

namespace emtm {

namespace fs = std::filesystem;
using nlohmann::json;

void Sample::validate() const {
  if (video.rank() != 2 || query.rank() != 2) {
    throw DimensionError("sample '" + id + "' needs rank-2 video and query features");
  }
  if (!(t_start >= 0.0 && t_start < t_end && t_end <= duration)) {
    throw OrderingError("sample '" + id + "' violates 0 <= start < end <= duration: start=" +
                        std::to_string(t_start) + " end=" + std::to_string(t_end) +
                        " duration=" + std::to_string(duration));
  }
}

void SyntheticSpec::validate() const {
  if (count <= 0 || n <= 0 || d_v <= 0 || d_q <= 0) {
    throw ConfigError("synthetic spec needs positive count, n, d_v, d_q");
  }
  if (m_min < 1 || m_max < m_min) {
    throw ConfigError("query length range [" + std::to_string(m_min) + ", " +
                      std::to_string(m_max) + "] is degenerate");
  }
  if (!(snr > 0.0)) throw ConfigError("signal-to-noise ratio must be positive");
  if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0)) {
    throw ConfigError("segment fractions must satisfy 0 < min <= max <= 1, got " +
                      std::to_string(min_frac) + " and " + std::to_string(max_frac));
  }
  if (!(min_duration > 0.0 && min_duration <= max_duration)) {
    throw ConfigError("duration range is degenerate");
  }
}

std::vector<Sample> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();

  // One fixed projection relates patterns to query space for the whole
  // dataset, so the mapping a model must learn is stationary.
  Rng proj_rng(derive_seed(spec.seed, "projection"));
  MatXd proj(spec.d_v, spec.d_q);
  for (Index r = 0; r < spec.d_v; ++r) {
    for (Index c = 0; c < spec.d_q; ++c) {
      proj(r, c) = proj_rng.normal() / std::sqrt(static_cast<double>(spec.d_v));
    }
  }

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (Index idx = 0; idx < spec.count; ++idx) {
    // Per-sample generator, so samples are independent of generation order.
    Rng rng(derive_seed(spec.seed, spec.id_prefix + std::to_string(idx)));

    Sample s;
    {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%05lld", spec.id_prefix.c_str(),
                    static_cast<long long>(idx));
      s.id = buf;
    }
    s.duration = rng.uniform(spec.min_duration, spec.max_duration);
    double frac = rng.uniform(spec.min_frac, spec.max_frac);
    double seg_len = frac * s.duration;
    s.t_start = rng.uniform(0.0, s.duration - seg_len);
    s.t_end = s.t_start + seg_len;

    Index m = spec.m_min + static_cast<Index>(rng.below(static_cast<std::uint64_t>(
                               spec.m_max - spec.m_min + 1)));

    Eigen::ArrayXd pattern(spec.d_v);
    for (Index i = 0; i < spec.d_v; ++i) pattern[i] = rng.normal();

    ClipGrid grid(spec.n, s.duration);
    Index seg_lo = grid.time_to_index(s.t_start);
    Index seg_hi = grid.time_to_index(s.t_end);

    s.video = Tensor::zeros({spec.n, spec.d_v});
    for (Index i = 0; i < spec.n; ++i) {
      bool inside = i >= seg_lo && i <= seg_hi;
      for (Index c = 0; c < spec.d_v; ++c) {
        s.video.at(i, c) = rng.normal() + (inside ? spec.snr * pattern[c] : 0.0);
      }
    }

    Eigen::RowVectorXd projected = pattern.matrix().transpose() * proj;
    s.query = Tensor::zeros({m, spec.d_q});
    for (Index j = 0; j < m; ++j) {
      for (Index c = 0; c < spec.d_q; ++c) {
        s.query.at(j, c) = projected[c] + rng.normal();
      }
    }

    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void SimulatedTeacherSpec::validate() const {
  if (noise < 0.0) throw ConfigError("boundary noise must be nonnegative");
  if (k < 1) throw ConfigError("proposal count must be at least 1, got " + std::to_string(k));
  if (!(sharpness > 0.0)) throw ConfigError("score sharpness must be positive");
}

TeacherOutput simulate_teacher(const Sample& sample, const SimulatedTeacherSpec& tspec,
                               const ClipGrid& grid) {
  tspec.validate();
  sample.validate();
  Rng rng(derive_seed(tspec.seed, sample.id + ":" + format_tag(tspec.format)));

  const Index n = grid.n;
  auto clamp_idx = [n](double x) {
    return std::min(std::max(x, 0.0), static_cast<double>(n - 1));
  };
  double ps = clamp_idx(grid.continuous_index(sample.t_start) + tspec.bias +
                        tspec.noise * rng.normal());
  double pe = clamp_idx(grid.continuous_index(sample.t_end) + tspec.bias +
                        tspec.noise * rng.normal());
  if (ps > pe) std::swap(ps, pe);
  auto to_seconds = [&](double idx) {
    return (idx + 0.5) * grid.duration / static_cast<double>(n);
  };

  switch (tspec.format) {
    case TeacherFormat::span: {
      SpanLogits o;
      o.start_logits.resize(n);
      o.end_logits.resize(n);
      for (Index i = 0; i < n; ++i) {
        double di = static_cast<double>(i);
        o.start_logits[i] = -tspec.sharpness * (di - ps) * (di - ps);
        o.end_logits[i] = -tspec.sharpness * (di - pe) * (di - pe);
      }
      return o;
    }
    case TeacherFormat::map2d: {
      Map2D o;
      o.scores.resize(n, n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          double di = static_cast<double>(i) - ps;
          double dj = static_cast<double>(j) - pe;
          o.scores(i, j) = std::exp(-tspec.sharpness * (di * di + dj * dj));
        }
      }
      return o;
    }
    case TeacherFormat::regression:
      return RegressionPair{to_seconds(ps), to_seconds(pe)};
    case TeacherFormat::proposals: {
      ProposalList o;
      // The first candidate is the perturbed pair itself, so k = 1 carries
      // exactly the regression information; the rest jitter around it with
      // scores decaying in the jitter magnitude. Jitter scales with the
      // noise knob: a noiseless teacher emits k copies of the exact pair,
      // which aggregate back to the single-candidate distribution.
      o.candidates.push_back({to_seconds(ps), to_seconds(pe), 1.0});
      for (Index c = 1; c < tspec.k; ++c) {
        double js = tspec.noise * rng.normal();
        double je = tspec.noise * rng.normal();
        double cs = clamp_idx(ps + js);
        double ce = clamp_idx(pe + je);
        if (cs > ce) std::swap(cs, ce);
        o.candidates.push_back({to_seconds(cs), to_seconds(ce),
                                std::exp(-tspec.sharpness * (js * js + je * je))});
      }
      return o;
    }
  }
  throw ContractError("unhandled teacher format");
}

namespace {

// Lossless double -> decimal text (17 significant digits round-trip exactly).
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number '" + text + "'");
  }
}

long long parse_int(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad integer '" + text + "'");
  }
}

void write_payload(const fs::path& file, const Sample& s) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  auto write_tensor = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  };
  write_tensor(s.video);
  write_tensor(s.query);
  if (!out) throw IoError("short write to '" + file.string() + "'");
}

}  // namespace

void save_features(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("cannot open '" + (dir / "manifest.tsv").string() + "'");

  Index d_v = samples.empty() ? 0 : samples.front().video.dim(1);
  Index d_q = samples.empty() ? 0 : samples.front().query.dim(1);
  manifest << "emtm-features\t1\t" << d_v << "\t" << d_q << "\n";
  for (const Sample& s : samples) {
    s.validate();
    if (s.video.dim(1) != d_v || s.query.dim(1) != d_q) {
      throw DimensionError("sample '" + s.id + "' feature widths differ from the first sample");
    }
    manifest << s.id << "\t" << s.n() << "\t" << s.m() << "\t" << fmt_double(s.duration) << "\t"
             << fmt_double(s.t_start) << "\t" << fmt_double(s.t_end) << "\n";
    write_payload(dir / (s.id + ".bin"), s);
  }
  if (!manifest) throw IoError("short write to manifest in '" + dir.string() + "'");
}

std::vector<Sample> load_features(const fs::path& dir) {
  fs::path manifest_path = dir / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open '" + manifest_path.string() + "'");

  auto split_tabs = [](const std::string& line) {
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      std::size_t tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    return fields;
  };

  std::string line;
  if (!std::getline(manifest, line)) {
    throw FormatError("manifest line 1: missing header");
  }
  std::vector<std::string> header = split_tabs(line);
  if (header.size() != 4 || header[0] != "emtm-features" || header[1] != "1") {
    throw FormatError("manifest line 1: expected 'emtm-features\\t1\\t<d_v>\\t<d_q>'");
  }
  Index d_v = parse_int(header[2], "manifest line 1");
  Index d_q = parse_int(header[3], "manifest line 1");

  std::vector<Sample> out;
  long line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_tabs(line);
    std::string where = "manifest line " + std::to_string(line_no);
    if (f.size() != 6) {
      throw FormatError(where + ": expected 6 tab-separated fields, got " +
                        std::to_string(f.size()));
    }
    Sample s;
    s.id = f[0];
    where += " (sample '" + s.id + "')";
    Index n = parse_int(f[1], where);
    Index m = parse_int(f[2], where);
    if (n <= 0 || m <= 0) throw FormatError(where + ": nonpositive n or m");
    s.duration = parse_double(f[3], where);
    s.t_start = parse_double(f[4], where);
    s.t_end = parse_double(f[5], where);

    fs::path payload = dir / (s.id + ".bin");
    std::ifstream in(payload, std::ios::binary);
    if (!in) throw IoError(where + ": missing payload '" + payload.string() + "'");
    std::size_t want = static_cast<std::size_t>(n * d_v + m * d_q);
    s.video = Tensor::zeros({n, d_v});
    s.query = Tensor::zeros({m, d_q});
    in.read(reinterpret_cast<char*>(s.video.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(n * d_v)));
    in.read(reinterpret_cast<char*>(s.query.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m * d_q)));
    if (!in) {
      throw FormatError(where + ": payload holds fewer than " + std::to_string(want) +
                        " doubles");
    }
    char extra;
    if (in.read(&extra, 1)) {
      throw FormatError(where + ": payload holds more than " + std::to_string(want) + " doubles");
    }
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

json output_to_json(const TeacherOutput& o) {
  json j;
  j["format"] = format_tag(format_of(o));
  switch (format_of(o)) {
    case TeacherFormat::span: {
      const auto& s = std::get<SpanLogits>(o);
      j["start_logits"] = std::vector<double>(s.start_logits.begin(), s.start_logits.end());
      j["end_logits"] = std::vector<double>(s.end_logits.begin(), s.end_logits.end());
      break;
    }
    case TeacherFormat::map2d: {
      const auto& m = std::get<Map2D>(o);
      json rows = json::array();
      for (Index i = 0; i < m.scores.rows(); ++i) {
        json row = json::array();
        for (Index jx = 0; jx < m.scores.cols(); ++jx) row.push_back(m.scores(i, jx));
        rows.push_back(std::move(row));
      }
      j["scores"] = std::move(rows);
      break;
    }
    case TeacherFormat::regression: {
      const auto& r = std::get<RegressionPair>(o);
      j["t_start"] = r.t_start;
      j["t_end"] = r.t_end;
      break;
    }
    case TeacherFormat::proposals: {
      const auto& p = std::get<ProposalList>(o);
      json cands = json::array();
      for (const Proposal& c : p.candidates) {
        cands.push_back({{"t_start", c.t_start}, {"t_end", c.t_end}, {"score", c.score}});
      }
      j["candidates"] = std::move(cands);
      break;
    }
  }
  return j;
}

TeacherOutput output_from_json(const json& j, const std::string& where) {
  if (!j.contains("format") || !j["format"].is_string()) {
    throw FormatError(where + ": missing 'format' tag");
  }
  TeacherFormat f = parse_format_tag(j["format"].get<std::string>());  // names unknown tags
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
    return j[key];
  };
  auto to_array = [&](const json& arr, const char* key) {
    if (!arr.is_array()) throw FormatError(where + ": field '" + key + "' must be an array");
    Eigen::ArrayXd v(arr.size());
    Index i = 0;
    for (const json& x : arr) {
      if (!x.is_number()) throw FormatError(where + ": non-numeric entry in '" + key + "'");
      v[i++] = x.get<double>();
    }
    return v;
  };

  switch (f) {
    case TeacherFormat::span: {
      SpanLogits s;
      s.start_logits = to_array(need("start_logits"), "start_logits");
      s.end_logits = to_array(need("end_logits"), "end_logits");
      return s;
    }
    case TeacherFormat::map2d: {
      const json& rows = need("scores");
      if (!rows.is_array() || rows.empty()) {
        throw FormatError(where + ": 'scores' must be a non-empty array of rows");
      }
      Map2D m;
      m.scores.resize(static_cast<Index>(rows.size()),
                      static_cast<Index>(rows.front().size()));
      Index i = 0;
      for (const json& row : rows) {
        Eigen::ArrayXd r = to_array(row, "scores");
        if (r.size() != m.scores.cols()) {
          throw FormatError(where + ": ragged 'scores' rows");
        }
        m.scores.row(i++) = r.matrix().transpose();
      }
      return m;
    }
    case TeacherFormat::regression: {
      const json& ts = need("t_start");
      const json& te = need("t_end");
      if (!ts.is_number() || !te.is_number()) {
        throw FormatError(where + ": regression times must be numbers");
      }
      return RegressionPair{ts.get<double>(), te.get<double>()};
    }
    case TeacherFormat::proposals: {
      const json& cands = need("candidates");
      if (!cands.is_array()) throw FormatError(where + ": 'candidates' must be an array");
      ProposalList p;
      for (const json& c : cands) {
        if (!c.is_object() || !c.contains("t_start") || !c.contains("t_end") ||
            !c.contains("score")) {
          throw FormatError(where + ": each candidate needs t_start, t_end, score");
        }
        p.candidates.push_back({c["t_start"].get<double>(), c["t_end"].get<double>(),
                                c["score"].get<double>()});
      }
      return p;
    }
  }
  throw ContractError("unhandled teacher format");
}

}  // namespace

void save_teacher_dump(const std::vector<TeacherDumpRecord>& records, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  for (const TeacherDumpRecord& r : records) {
    json j = output_to_json(r.output);
    j["id"] = r.id;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write to '" + file.string() + "'");
}

std::vector<TeacherDumpRecord> load_teacher_dump(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  std::vector<TeacherDumpRecord> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = "teacher dump line " + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw FormatError(where + ": invalid JSON");
    if (!j.contains("id") || !j["id"].is_string()) {
      throw FormatError(where + ": missing 'id'");
    }
    TeacherDumpRecord rec;
    rec.id = j["id"].get<std::string>();
    where += " (sample '" + rec.id + "')";
    rec.output = output_from_json(j, where);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace emtm
