#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "emi/config.hpp"
#include "emi/data.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI from `cwd` with stdout and stderr captured to files.
Result run(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const std::string cmd =
      "cd '" + cwd.string() + "' && " + env + " '" EMI_CLI_PATH "' " + args + " > cli.out 2> cli.err";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(cwd / "cli.out");
  r.err = slurp(cwd / "cli.err");
  return r;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// The config echo is the first JSON object on stderr.
std::string echoed_config(const std::string& err) {
  const auto end = err.find("\n}\n");
  REQUIRE(end != std::string::npos);
  return err.substr(0, end + 2);
}

const std::string kSmall = "--dims 6:5:4 --hidden 8 --align 8 --batch-size 8 --epochs 2 --quiet";
const std::string kSmallLr = kSmall + " --lr 5e-3";

// Shared synthetic dataset, generated once through the CLI.
const TempDir& dataset() {
  static const TempDir dir("cli_data");
  static const bool made = [] {
    const Result r = run(dir.path(), "gen-synth --n 80 --dims 6:5:4 --seed 3 --min-len 4 --max-len 12 --out d");
    REQUIRE(r.code == 0);
    return true;
  }();
  (void)made;
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  TempDir dir("cli_usage");
  CHECK(run(dir.path(), "").code == 1);
  CHECK(run(dir.path(), "bogus").code == 1);
  CHECK(run(dir.path(), "train --no-such-flag").code == 1);
  CHECK(run(dir.path(), "train --hidden abc").code == 1);
  CHECK(run(dir.path(), "gen-synth --out x --dims 1:2").code == 1);
  CHECK(run(dir.path(), "train --fusion sum --dims 4:4:4").code == 1);
  CHECK(run(dir.path(), "--kernels nonesuch inspect --emif x.emif").code == 1);
  std::ofstream(dir / "bad.json") << R"({"hiden_dim": 3})";
  const Result r = run(dir.path(), "train --config bad.json");
  CHECK(r.code == 1);
  CHECK(r.err.find("hiden_dim") != std::string::npos);
}

TEST_CASE("help shows the training defaults") {
  TempDir dir("cli_help");
  const Result r = run(dir.path(), "train --help");
  CHECK(r.code == 0);
  for (const char* want : {"--hidden UINT [256]", "--dropout FLOAT [0.2]", "--batch-size UINT [32]",
                           "--lr FLOAT [1e-4]", "--weight-decay FLOAT [1e-4]", "--epochs UINT [30]",
                           "--patience UINT [8]", "--clip FLOAT [1.0]", "--ema FLOAT [0.999]",
                           "--align UINT [128]"}) {
    CHECK_MESSAGE(r.out.find(want) != std::string::npos, want);
  }
}

TEST_CASE("data errors exit 2 and report the byte offset") {
  TempDir dir("cli_data_err");
  Result r = run(dir.path(), "inspect --emif missing.emif");
  CHECK(r.code == 2);
  r = run(dir.path(), "train --manifest missing.csv --dims 4:4:4");
  CHECK(r.code == 2);
  r = run(dir.path(), "train --config missing.json");
  CHECK(r.code == 2);

  const fs::path src = dataset() / "d" / "features" / "s00.emif";
  std::string bytes = slurp(src);
  bytes[4] = 9;  // version
  std::ofstream(dir / "bad.emif", std::ios::binary) << bytes;
  r = run(dir.path(), "inspect --emif bad.emif");
  CHECK(r.code == 2);
  CHECK(r.err.find("format error at byte 4") != std::string::npos);

  bytes = slurp(src);
  std::ofstream(dir / "short.emif", std::ios::binary) << bytes.substr(0, 3);
  r = run(dir.path(), "inspect --emif short.emif");
  CHECK(r.code == 2);
  CHECK(r.err.find("format error at byte 0") != std::string::npos);
}

TEST_CASE("gen-synth is deterministic and writes the sidecar") {
  TempDir dir("cli_gen");
  const std::string args = "gen-synth --n 30 --dims 3:3:3 --seed 9 --mode disjoint --min-len 2 --max-len 6";
  REQUIRE(run(dir.path(), args + " --out a").code == 0);
  REQUIRE(run(dir.path(), args + " --out b").code == 0);
  CHECK(slurp(dir / "a" / "manifest.csv") == slurp(dir / "b" / "manifest.csv"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "features")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / "features" / e.path().filename()));
    ++files;
  }
  CHECK(files == 30);
  const auto side = nlohmann::json::parse(slurp(dir / "a" / "synth.json"));
  CHECK(side["mode"] == "disjoint");
  CHECK(side["n"] == 30);
  CHECK(count_lines(slurp(dir / "a" / "manifest.csv")) == 31);
}

TEST_CASE("inspect prints the EMIF header") {
  const Result r = run(dataset().path(), "inspect --emif d/features/s01.emif");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("magic EMIF") != std::string::npos);
  CHECK(r.out.find("version 1") != std::string::npos);
  for (const char* m : {"visual:", "audio:", "text:"}) CHECK(r.out.find(m) != std::string::npos);
}

TEST_CASE("train, evaluate, predict and inspect a run") {
  const TempDir& data = dataset();
  fs::remove_all(data / "run");
  const Result t = run(data.path(), "train --manifest d/manifest.csv --run-dir run " + kSmallLr);
  REQUIRE(t.code == 0);
  CHECK(t.out == "run/best.emic\n");
  for (const char* f : {"best.emic", "last.emic", "config.json", "log.jsonl"}) CHECK(fs::exists(data / "run" / f));

  const Result ema = run(data.path(), "evaluate --ckpt run/best.emic");
  const Result raw = run(data.path(), "evaluate --ckpt run/best.emic --no-ema");
  REQUIRE(ema.code == 0);
  REQUIRE(raw.code == 0);
  const auto je = nlohmann::json::parse(ema.out), jr = nlohmann::json::parse(raw.out);
  CHECK(je["n"] == 8);
  CHECK(je["p"].size() == 6);
  CHECK(je["p_mean"] != jr["p_mean"]);
  const Result both = run(data.path(), "evaluate --ckpt run/best.emic --both");
  REQUIRE(both.code == 0);
  const auto jb = nlohmann::json::parse(both.out);
  CHECK(jb["ema"] == je);
  CHECK(jb["raw"] == jr);

  const Result p = run(data.path(), "predict --ckpt run/best.emic --split test");
  REQUIRE(p.code == 0);
  CHECK(p.out.rfind("id,adm,amu,det,emp,exc,joy\n", 0) == 0);
  CHECK(count_lines(p.out) == 1 + 8);
  std::istringstream rows(p.out);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    for (int k = 0; k < 6; ++k) {
      REQUIRE(std::getline(cells, cell, ','));
      const double v = std::stod(cell);
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  REQUIRE(run(data.path(), "predict --ckpt run/best.emic --split test --out p.csv").code == 0);
  CHECK(slurp(data / "p.csv") == p.out);

  const Result insp = run(data.path(), "inspect --ckpt run/best.emic");
  REQUIRE(insp.code == 0);
  emi::ModelConfig mc;
  mc.feature_dims = {6, 5, 4};
  mc.hidden = 8;
  CHECK(insp.out.find("parameters " + std::to_string(emi::parameter_count(mc))) != std::string::npos);
  CHECK(insp.out.find("(match)") != std::string::npos);
}

TEST_CASE("the echoed config reproduces the run") {
  const TempDir& data = dataset();
  fs::remove_all(data / "echo1");
  fs::remove_all(data / "echo2");
  const Result a = run(data.path(), "train --manifest d/manifest.csv --run-dir echo1 --seed 4 " + kSmallLr);
  REQUIRE(a.code == 0);
  const std::string echo = echoed_config(a.err);
  CHECK(emi::to_json(emi::config_from_json(echo), 2) == echo);
  std::ofstream(data / "echo.json") << echo;
  const Result b = run(data.path(), "train --config echo.json --run-dir echo2 --quiet");
  REQUIRE(b.code == 0);
  CHECK(slurp(data / "echo1" / "best.emic") == slurp(data / "echo2" / "best.emic"));
  CHECK(slurp(data / "echo1" / "log.jsonl") == slurp(data / "echo2" / "log.jsonl"));
}

TEST_CASE("EMI_RUN_ROOT places relative run dirs") {
  const TempDir& data = dataset();
  TempDir root("cli_root");
  const Result r = run(data.path(), "train --manifest d/manifest.csv --run-dir rooted " + kSmallLr,
                       "EMI_RUN_ROOT='" + root.path().string() + "'");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(root / "rooted" / "best.emic"));
}

TEST_CASE("numeric failure exits 3") {
  const TempDir& data = dataset();
  fs::remove_all(data / "blowup");
  const Result r = run(data.path(), "train --manifest d/manifest.csv --run-dir blowup --lr 1e200 " + kSmall);
  CHECK(r.code == 3);
  CHECK(r.err.find("numeric failure") != std::string::npos);
  const std::string log = slurp(data / "blowup" / "log.jsonl");
  CHECK(log.find("abort") != std::string::npos);
}

TEST_CASE("ablate writes an eight-row grid") {
  const TempDir& data = dataset();
  fs::remove_all(data / "abl");
  const Result r =
      run(data.path(), "ablate --manifest d/manifest.csv --run-dir abl --dims 6:5:4 --hidden 4 --align 6 "
                       "--batch-size 16 --epochs 1");
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 9);
  CHECK(slurp(data / "abl" / "ablation.csv") == r.out);
  CHECK(run(data.path(), "ablate --grid other --dims 4:4:4").code == 1);
}
