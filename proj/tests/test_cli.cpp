#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_util.hpp"

#ifndef PSINVERT_CLI
#error "PSINVERT_CLI must name the command-line binary"
#endif

namespace {

struct RunResult {
  int status = -1;
  std::string out;
};

// Runs the CLI with `args`; stdout is captured, stderr is discarded unless
// `with_stderr` merges it into the capture.
RunResult run(const std::string& args, bool with_stderr = false) {
  const std::string cmd = std::string(PSINVERT_CLI) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSmallSynth = "synth --height 20 --width 20 --radius 8 --lights 6";
const char* kSmallTrain =
    "--epochs 6 --hidden-width 12 --normal-layers 2 --material-layers 2 --encoding-levels 2 "
    "--pixels-per-iteration 128 --metrics-interval 2 --threads 1 --quiet";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("").status == 2);
  CHECK(run("reconstruct --bogus-flag").status == 2);
  CHECK(run("frobnicate").status == 2);
  const RunResult r = run("synth --no-such-flag 3 --out x", true);
  CHECK(r.status == 2);
  CHECK(r.out.find("\"error\"") != std::string::npos);
}

TEST_CASE("data errors exit 1") {
  TempDir dir("cli_missing");
  const RunResult r = run("reconstruct " + (dir / "absent").string() + " --out " + (dir / "o").string(), true);
  CHECK(r.status == 1);
  CHECK(r.out.find("MissingFile") != std::string::npos);
}

TEST_CASE("bad config exits 2") {
  TempDir dir("cli_cfg");
  REQUIRE(run(std::string(kSmallSynth) + " --out " + (dir / "ds").string()).status == 0);
  CHECK(run("reconstruct " + (dir / "ds").string() + " --out " + (dir / "o").string() + " --epochs 0").status == 2);
  std::ofstream(dir / "bad.cfg") << "mystery = 3\n";
  CHECK(run("reconstruct " + (dir / "ds").string() + " --out " + (dir / "o").string() + " --config " +
            (dir / "bad.cfg").string())
            .status == 2);
}

TEST_CASE("synth, reconstruct, eval and render") {
  TempDir dir("cli_pipe");
  const std::string ds = (dir / "ds").string(), out = (dir / "out").string();
  REQUIRE(run(std::string(kSmallSynth) + " --out " + ds).status == 0);
  CHECK(std::filesystem::exists(dir / "ds" / "filenames.txt"));
  CHECK(std::filesystem::exists(dir / "ds" / "normal_gt.pfm"));

  const RunResult rec = run("reconstruct " + ds + " --out " + out + " " + kSmallTrain);
  REQUIRE(rec.status == 0);
  CHECK(rec.out.find("final_loss=") != std::string::npos);

  const RunResult ev = run("eval --est " + out + " --gt " + ds);
  REQUIRE(ev.status == 0);
  CHECK(ev.out.find("normal_mae_deg=") != std::string::npos);
  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  for (const char* key : {"normal_mae_deg", "light_dir_mae_deg", "intensity_si_error", "psnr_db"})
    CHECK(report[key].is_number());
  CHECK(report["n_images"] == 6);
  CHECK(report["config_echo"]["epochs"] == "6");

  REQUIRE(run("render --model " + out + " --out " + (dir / "re").string()).status == 0);
  CHECK(std::filesystem::exists(dir / "re" / "filenames.txt"));
}

TEST_CASE("identical runs write identical files") {
  TempDir dir("cli_det");
  const std::string ds = (dir / "ds").string();
  REQUIRE(run(std::string(kSmallSynth) + " --out " + ds).status == 0);
  for (const char* o : {"a", "b"}) {
    REQUIRE(run("reconstruct " + ds + " --out " + (dir / o).string() + " --seed 3 " + kSmallTrain).status == 0);
    REQUIRE(run("eval --est " + (dir / o).string() + " --gt " + ds).status == 0);
  }
  CHECK(slurp(dir / "a" / "train_log.csv") == slurp(dir / "b" / "train_log.csv"));
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  CHECK_FALSE(slurp(dir / "a" / "train_log.csv").empty());
}

TEST_CASE("gbr-probe writes a csv") {
  TempDir dir("cli_probe");
  const RunResult r = run("gbr-probe --height 16 --width 16 --radius 6 --grid 3 --threads 1 --out " +
                          (dir / "p.csv").string());
  REQUIRE(r.status == 0);
  const std::string csv = slurp(dir / "p.csv");
  CHECK(csv.rfind("mu,nu,lambda,loss\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 28);
}

TEST_CASE("gradcheck prints its maximum error") {
  const RunResult r = run("gradcheck --trials 5");
  CHECK(r.status == 0);
  const auto pos = r.out.find("max_relative_error=");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(r.out.substr(pos + 19)) < 1e-4);
}
