#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = TEST_WORK_DIR;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome todma(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = std::string("cd '") + kWork.string() + "' && '" TODMA_CLI_PATH "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

const std::string kSmall = "--quiet --set sim.K=3 sim.Q=32 sim.M=16 sim.N=8";
const std::string kHeader =
    "trial,K,L,M,Q,N,snr_db,tder,nmse_db,ter_todma,ter_nonorth,ter_orth,latency_todma_s,latency_orth_s,seed";

}  // namespace

TEST_CASE("run writes results.csv and manifest.json") {
  fs::remove_all(kWork / "run");
  const auto o = todma("run --out run --trials 2 --seed 9 " + kSmall);
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const std::string csv = slurp(kWork / "run" / "results.csv");
  std::istringstream lines(csv);
  std::string header, row;
  std::getline(lines, header);
  CHECK(header == kHeader);
  int rows = 0;
  while (std::getline(lines, row)) {
    if (row.empty()) continue;
    ++rows;
    CHECK(row.rfind(std::to_string(rows - 1) + ",3,4,16,32,8,", 0) == 0);  // desk preset keeps L = K + 1
  }
  CHECK(rows == 2);

  const auto manifest = nlohmann::json::parse(slurp(kWork / "run" / "manifest.json"));
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("config").at("sim").at("seed") == 9);
  CHECK(manifest.at("config").at("sim").at("K") == 3);
}

TEST_CASE("sweep and report") {
  fs::remove_all(kWork / "sweep");
  const auto o = todma("sweep --out sweep --trials 2 --workers 2 " + kSmall + " sweep.snr_db=[10,25]");
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const std::string csv = slurp(kWork / "sweep" / "results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  const auto r = todma("report sweep");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);
  CHECK(r.out.rfind("K,L,M,Q,N,snr_db,trials", 0) == 0);

  const auto again = todma("sweep --out sweep --trials 2 " + kSmall + " sweep.snr_db=[10,25]");
  CHECK(again.code == 0);
  CHECK(slurp(kWork / "sweep" / "results.csv") == csv);
}

TEST_CASE("config file with preset and --set override") {
  fs::remove_all(kWork / "cfg");
  {
    std::ofstream f(kWork / "small.json");
    f << R"({"preset": "desk", "sim": {"K": 2, "Q": 16, "M": 8, "N": 6}, "code_length": "fixed"})";
  }
  const auto o = todma("run --config small.json --out cfg --set sim.L=7 --quiet");
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto manifest = nlohmann::json::parse(slurp(kWork / "cfg" / "manifest.json"));
  CHECK(manifest.at("config").at("sim").at("L") == 7);
  CHECK(manifest.at("config").at("sim").at("Q") == 16);
}

TEST_CASE("errors exit nonzero with a stage tag") {
  const auto unknown = todma("run --out bad --set sim.bogus=1");
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("[config]") != std::string::npos);

  const auto missing = todma("run --config /nonexistent.json --out bad");
  CHECK(missing.code != 0);
  CHECK(missing.err.find("[config]") != std::string::npos);

  const auto io = todma("run --out /proc/todma_no/out " + kSmall);
  CHECK(io.code == 3);
  CHECK(io.err.find("[io]") != std::string::npos);

  const auto source =
      todma("run --out src_fail --set source.kind=corpus source.corpus=/nonexistent.txt " + kSmall);
  CHECK(source.code == 3);
  CHECK(source.err.find("[source]") != std::string::npos);

  const auto report = todma("report /nonexistent/results.csv");
  CHECK(report.code == 3);
  CHECK(report.err.find("[report]") != std::string::npos);

  CHECK(todma("").code != 0);
  CHECK(todma("frobnicate").code != 0);
}

TEST_CASE("version") {
  const auto o = todma("--version");
  CHECK(o.code == 0);
  CHECK(o.out.find('.') != std::string::npos);
}
