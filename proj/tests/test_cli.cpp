#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mat/data.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args, const fs::path& dir,
                  const std::string& env_prefix = "") {
  const fs::path log = dir / "cmd.log";
  const std::string cmd =
      env_prefix + " " + std::string(MAT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.output = testutil::read_file(log);
  return r;
}

std::string fixture_csv(const fs::path& dir) {
  return testutil::write_weather_csv(dir / "weather.csv", 400, 4, 77);
}

std::string tiny_train_flags(const std::string& csv, const fs::path& out) {
  return "train --data " + csv +
         " --lookback 24 --horizon 8 --n1 16 --n2 8 --dim 4 --heads 2 --epochs 2 --batch 8 "
         "--lr 1e-3 --seed 5 --out " +
         out.string();
}

}  // namespace

TEST_CASE("gradcheck command exits zero on a fresh build") {
  auto dir = testutil::temp_dir("cli_gradcheck");
  CmdResult r = run_cli("gradcheck", dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("pass") != std::string::npos);
}

TEST_CASE("train writes checkpoint, metrics, loss curve and config echo") {
  auto dir = testutil::temp_dir("cli_train");
  const std::string csv = fixture_csv(dir);
  CmdResult r = run_cli(tiny_train_flags(csv, dir / "run"), dir);
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.json"));
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "run" / "metrics.json"));
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(fs::exists(dir / "run" / "loss_curve.csv"));
  CHECK(fs::exists(dir / "run" / "config_resolved.json"));

  SUBCASE("identical reruns are byte-identical") {
    CmdResult r2 = run_cli(tiny_train_flags(csv, dir / "run2"), dir);
    REQUIRE(r2.exit_code == 0);
    CHECK(testutil::read_file(dir / "run" / "metrics.csv") ==
          testutil::read_file(dir / "run2" / "metrics.csv"));
    CHECK(testutil::read_file(dir / "run" / "loss_curve.csv") ==
          testutil::read_file(dir / "run2" / "loss_curve.csv"));
    CHECK(testutil::read_file(dir / "run" / "checkpoint.bin") ==
          testutil::read_file(dir / "run2" / "checkpoint.bin"));
  }

  SUBCASE("rerunning from the config echo reproduces outputs byte-identically") {
    CmdResult r3 = run_cli("train --config " + (dir / "run" / "config_resolved.json").string() +
                               " --out " + (dir / "run3").string(),
                           dir);
    REQUIRE(r3.exit_code == 0);
    CHECK(testutil::read_file(dir / "run" / "metrics.csv") ==
          testutil::read_file(dir / "run3" / "metrics.csv"));
    CHECK(testutil::read_file(dir / "run" / "checkpoint.bin") ==
          testutil::read_file(dir / "run3" / "checkpoint.bin"));
  }

  SUBCASE("evaluate produces the baseline table deterministically") {
    CmdResult e1 = run_cli("evaluate --data " + csv + " --checkpoint " +
                               (dir / "run" / "checkpoint").string() + " --seed 5 --out " +
                               (dir / "eval1").string(),
                           dir);
    REQUIRE(e1.exit_code == 0);
    const std::string table = testutil::read_file(dir / "eval1" / "eval_metrics.csv");
    CHECK(table.find("mat") != std::string::npos);
    CHECK(table.find("naive") != std::string::npos);
    CHECK(table.find("linear") != std::string::npos);

    CmdResult e2 = run_cli("evaluate --data " + csv + " --checkpoint " +
                               (dir / "run" / "checkpoint").string() + " --seed 5 --out " +
                               (dir / "eval2").string(),
                           dir);
    REQUIRE(e2.exit_code == 0);
    CHECK(table == testutil::read_file(dir / "eval2" / "eval_metrics.csv"));
  }

  SUBCASE("forecast emits an (M x T) CSV") {
    CmdResult f = run_cli("forecast --data " + csv + " --checkpoint " +
                              (dir / "run" / "checkpoint").string() + " --out " +
                              (dir / "fc").string(),
                          dir);
    REQUIRE(f.exit_code == 0);
    const std::string fcsv = testutil::read_file(dir / "fc" / "forecast.csv");
    // Header plus one row per channel; header carries t+1..t+8.
    CHECK(std::count(fcsv.begin(), fcsv.end(), '\n') == 5);
    CHECK(fcsv.find("t+8") != std::string::npos);
    CHECK(fcsv.find("t+9") == std::string::npos);
  }
}

TEST_CASE("config errors exit 2 with a machine-parseable line") {
  auto dir = testutil::temp_dir("cli_cfgerr");
  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"model.made_up": 1})";
  }
  CmdResult r = run_cli("train --config " + (dir / "bad.json").string(), dir);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("{\"error\":{\"code\":2") != std::string::npos);
  CHECK(r.output.find("made_up") != std::string::npos);

  CmdResult r2 = run_cli("train", dir);
  CHECK(r2.exit_code == 2);
}

TEST_CASE("data errors exit 3") {
  auto dir = testutil::temp_dir("cli_dataerr");
  CmdResult r = run_cli("train --data /nonexistent.csv --epochs 1", dir);
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("\"code\":3") != std::string::npos);
}

TEST_CASE("MAT_SEED is the seed fallback") {
  auto dir = testutil::temp_dir("cli_seed");
  const std::string csv = fixture_csv(dir);
  CmdResult r = run_cli("ingest --data " + csv + " --out " + (dir / "ing").string(), dir,
                        "MAT_SEED=4242");
  REQUIRE(r.exit_code == 0);
  const std::string echo = testutil::read_file(dir / "ing" / "config_resolved.json");
  CHECK(echo.find("\"train.seed\": 4242") != std::string::npos);
}

TEST_CASE("ingest prints a channel summary, caches, and never mutates its input") {
  auto dir = testutil::temp_dir("cli_ingest");
  const std::string csv = fixture_csv(dir);
  const std::string before = testutil::read_file(csv);
  CmdResult r = run_cli("ingest --data " + csv + " --out " + (dir / "ing").string(), dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("4 channels x 400 steps") != std::string::npos);
  CHECK(r.output.find("p (mbar)") != std::string::npos);
  CHECK(fs::exists(dir / "ing" / "cache.json"));
  CHECK(fs::exists(dir / "ing" / "cache.bin"));
  CHECK(testutil::read_file(csv) == before);

  // The cache reloads to the same matrix.
  mat::TimeSeriesDataset a = mat::load_csv(csv);
  mat::TimeSeriesDataset b = mat::load_dataset_cache((dir / "ing" / "cache").string());
  CHECK(testutil::bits_equal(a.values, b.values));
}

TEST_CASE("scan-bench writes the timing CSV") {
  auto dir = testutil::temp_dir("cli_bench");
  CmdResult r = run_cli("scan-bench --out " + (dir / "bench").string(), dir);
  REQUIRE(r.exit_code == 0);
  const std::string csv = testutil::read_file(dir / "bench" / "scan_bench.csv");
  CHECK(csv.find("length,path,ns_per_step") == 0);
  CHECK(csv.find(",sequential,") != std::string::npos);
  CHECK(csv.find(",parallel,") != std::string::npos);
  CHECK(csv.find("1024") != std::string::npos);
}
