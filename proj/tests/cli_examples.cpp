// Exercises the command-line binary the way a user drives it: generate a
// corpus, convert teacher dumps, train across seeds, score a checkpoint.
// Every check here reads the CLI's on-disk outputs back through the library
// loaders, so the binary and the file formats are tested as one contract.
// Run with the binary's path as the only argument.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "emtm/data.hpp"
#include "emtm/grid.hpp"
#include "emtm/teacher.hpp"
#include "emtm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emtm;

namespace {

int checks = 0;

#define EXPECT(cond, msg)                                           \
  do {                                                              \
    ++checks;                                                       \
    if (!(cond)) {                                                  \
      std::fprintf(stderr, "FAILED: %s (%s:%d)\n", msg, __FILE__, __LINE__); \
      std::exit(1);                                                 \
    }                                                               \
  } while (0)

std::string g_cli;
fs::path g_root;

void run(const std::string& args) {
  const std::string cmd =
      "'" + g_cli + "' " + args + " > '" + (g_root / "cli.log").string() + "' 2>&1";
  int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::ifstream in(g_root / "cli.log");
    std::ostringstream os;
    os << in.rdbuf();
    std::fprintf(stderr, "command failed (exit %d): %s\n%s\n", rc, args.c_str(),
                 os.str().c_str());
    std::exit(1);
  }
}

int run_expect_fail(const std::string& args) {
  const std::string cmd =
      "'" + g_cli + "' " + args + " > '" + (g_root / "cli.log").string() + "' 2>&1";
  int rc = std::system(cmd.c_str());
  EXPECT(rc != 0, "command was expected to fail");
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT(in.good(), "file should exist");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Byte-compares the data files under two directories. The run manifests are
// skipped: they record the (differing) output locations by design.
bool trees_equal(const fs::path& a, const fs::path& b) {
  auto data_files = [](const fs::path& dir) {
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json")
        rel.push_back(fs::relative(e.path(), dir));
    return rel;
  };
  std::vector<fs::path> rel = data_files(a);
  if (data_files(b).size() != rel.size()) return false;
  for (const fs::path& r : rel) {
    if (!fs::exists(b / r)) return false;
    if (slurp(a / r) != slurp(b / r)) return false;
  }
  return true;
}

const char* kTinyDims =
    " --n 16 --d-v 8 --d-q 6 --m-max 5 --count 24 --val-count 8 --test-count 8";

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <cli binary>\n", argv[0]);
    return 2;
  }
  g_cli = argv[1];
  g_root = fs::temp_directory_path() / "emtm_cli_examples";
  std::error_code ec;
  fs::remove_all(g_root, ec);
  fs::create_directories(g_root);

  // Default flags produce the standard 1000/200/200 corpus.
  {
    const fs::path out = g_root / "default";
    run("synth --out '" + out.string() + "'");
    EXPECT(load_features((out / "train").string()).size() == 1000, "default train split");
    EXPECT(load_features((out / "val").string()).size() == 200, "default val split");
    EXPECT(load_features((out / "test").string()).size() == 200, "default test split");
    std::puts("ok: default corpus is 1000/200/200");
  }

  // The same seed reproduces every byte; a different seed does not.
  {
    const fs::path a = g_root / "seed_a", b = g_root / "seed_b", c = g_root / "seed_c";
    run("synth --out '" + a.string() + "' --seed 9" + kTinyDims);
    run("synth --out '" + b.string() + "' --seed 9" + kTinyDims);
    run("synth --out '" + c.string() + "' --seed 10" + kTinyDims);
    EXPECT(trees_equal(a, b), "same seed, same bytes");
    EXPECT(!trees_equal(a, c), "different seed, different bytes");
    std::puts("ok: synth output is a pure function of the seed");
  }

  // One dump per requested teacher format, each ingestible again.
  const fs::path data = g_root / "teachers";
  {
    run("synth --out '" + data.string() + "' --seed 3" + kTinyDims +
        " --teachers span,map2d,regression,proposals --teacher-noise 0");
    for (const std::string tag : {"span", "map2d", "regression", "proposals"}) {
      auto records = load_teacher_dump((data / ("teacher_" + tag + ".jsonl")).string());
      EXPECT(records.size() == 24, "one record per training sample");
      for (const auto& rec : records)
        EXPECT(format_tag(format_of(rec.output)) == tag, "dump format matches its tag");
    }
    std::puts("ok: four teacher formats round-trip through their dumps");
  }

  // Converting a noise-free teacher recovers the labels; every distribution
  // passes the validator.
  {
    const fs::path out = g_root / "unified";
    run("unify --dump '" + (data / "teacher_regression.jsonl").string() + "' --data '" +
        data.string() + "' --split train --n 16 --out '" + out.string() + "'");

    std::map<std::string, Sample> by_id;
    for (const Sample& s : load_features((data / "train").string())) by_id[s.id] = s;

    std::ifstream in(out / "distributions.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
      json rec = json::parse(line);
      const Sample& s = by_id.at(rec.at("id").get<std::string>());
      std::vector<double> ps = rec.at("p_start").get<std::vector<double>>();
      std::vector<double> pe = rec.at("p_end").get<std::vector<double>>();
      EXPECT(ps.size() == 16 && pe.size() == 16, "distribution length matches the grid");

      double sum_s = 0.0, sum_e = 0.0;
      std::size_t arg_s = 0, arg_e = 0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        EXPECT(ps[i] >= 0.0 && pe[i] >= 0.0, "probabilities are nonnegative");
        sum_s += ps[i];
        sum_e += pe[i];
        if (ps[i] > ps[arg_s]) arg_s = i;
        if (pe[i] > pe[arg_e]) arg_e = i;
      }
      EXPECT(std::abs(sum_s - 1.0) < 1e-9 && std::abs(sum_e - 1.0) < 1e-9,
             "each channel sums to one");

      ClipGrid grid(16, s.duration);
      EXPECT(static_cast<Index>(arg_s) == grid.time_to_index(s.t_start),
             "noise-free teacher peaks at the start label");
      EXPECT(static_cast<Index>(arg_e) == grid.time_to_index(s.t_end),
             "noise-free teacher peaks at the end label");
      ++lines;
    }
    EXPECT(lines == 24, "one distribution per dump record");
    std::puts("ok: noise-free unification recovers the labels and validates");
  }

  // Multi-seed training emits one checkpoint and log per seed plus a
  // mean-and-spread summary; evaluation of a checkpoint is repeatable.
  {
    const fs::path out = g_root / "run";
    run("train --data '" + data.string() + "' --out '" + out.string() +
        "' --teachers regression,span --seeds 1,2,3 --d 16 --n 16 --d-v 8 --d-q 6 --m-max 5"
        " --kernel 5 --heads 4 --blocks 1 --dropout 0 --lr 1e-3 --batch 8 --epochs 2");
    for (int seed : {1, 2, 3}) {
      EXPECT(fs::exists(out / ("ckpt_seed" + std::to_string(seed) + ".bin")),
             "checkpoint per seed");
      EXPECT(fs::exists(out / ("log_seed" + std::to_string(seed) + ".txt")), "log per seed");
    }
    std::string summary = slurp(out / "summary.txt");
    EXPECT(summary.find("[summary] runs=3") != std::string::npos, "summary covers all seeds");
    EXPECT(summary.find("miou_mean=") != std::string::npos &&
               summary.find("miou_spread=") != std::string::npos,
           "summary reports mean and spread");

    const fs::path e1 = g_root / "eval1", e2 = g_root / "eval2";
    const std::string eval_flags = "' --data '" + data.string() +
                                   "' --split test --d 16 --n 16 --d-v 8 --d-q 6 --m-max 5"
                                   " --kernel 5 --heads 4 --blocks 1";
    run("eval --ckpt '" + (out / "ckpt_seed1.bin").string() + eval_flags + " --out '" +
        e1.string() + "'");
    run("eval --ckpt '" + (out / "ckpt_seed1.bin").string() + eval_flags + " --out '" +
        e2.string() + "'");
    EXPECT(slurp(e1 / "report.txt") == slurp(e2 / "report.txt"),
           "scoring the same checkpoint twice gives identical reports");
    std::puts("ok: multi-seed training artifacts and repeatable evaluation");
  }

  // Failures speak distinct exit codes: parse 2, config 3, bad data 4.
  {
    EXPECT(run_expect_fail("train --out nowhere") == 2, "missing required flag is a parse error");
    EXPECT(run_expect_fail("profile --out '" + (g_root / "p").string() + "' --path sideways") == 3,
           "unknown cost path is a config error");
    EXPECT(run_expect_fail("unify --dump '" + (data / "teacher_span.jsonl").string() +
                           "' --data '" + data.string() +
                           "' --split test --n 16 --out '" + (g_root / "u2").string() + "'") == 4,
           "dump naming samples outside the split is a data error");
    std::puts("ok: parse, config, and data failures exit distinctly");
  }

  fs::remove_all(g_root, ec);
  std::printf("all cli example checks passed (%d assertions)\n", checks);
  return 0;
}
