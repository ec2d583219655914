#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "bapofi/dataset.hpp"
#include "bapofi/simulation.hpp"

namespace fs = std::filesystem;
using namespace bapofi;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(BAPOFI_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bapofi_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path small_trial(const fs::path& dir) {
  const auto spec = sim::calibrate_scenario(sim::make_scenario("E2", 0.4), sim::draw_covariates(20000, 10, 3));
  Rng rng(8);
  auto d = sim::generate_tte(spec, 80, 10, rng);
  d = sim::apply_censoring(d, 0.1, rng);
  d = sim::generate_tox(spec, d, rng);
  const auto path = dir / "trial.csv";
  write_dataset_file(path.string(), d);
  return path;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes") {
    const auto dir = scratch("codes");
    CHECK(run("--help") == 0);
    CHECK(run("analyze --nonsense") == 3);
    {
      std::ofstream bad(dir / "bad.csv");
      bad << "arm,event,x\n0,1,2\n";
    }
    CHECK(run("analyze --data " + (dir / "bad.csv").string() + " --out " + (dir / "o").string()) == 2);
    {
      std::ofstream constant(dir / "const.csv");
      constant << "arm,time,event,x\n0,3,1,1\n1,4,1,1\n";
    }
    CHECK(run("analyze --data " + (dir / "const.csv").string() + " --out " + (dir / "o").string()) == 2);
    CHECK(run("simulate --scenario E42 --reps 1 --out " + (dir / "s").string()) == 3);
    CHECK(run("simulate --scenario E2 --n 401 --out " + (dir / "s").string()) == 3);
    CHECK(run("analyze --out " + (dir / "o").string()) == 3);
    fs::remove_all(dir);
  }

  TEST_CASE("analyze writes one report per tau") {
    const auto dir = scratch("analyze");
    const auto data = small_trial(dir);
    const auto out = dir / "out";
    const int code = run("analyze --data " + data.string() + " --tau 90 60 120 --iterations 60 --burn-in 20 " +
                         "--thin 2 --out " + out.string());
    REQUIRE(code == 0);
    for (const char* t : {"90", "60", "120"}) {
      CHECK(fs::exists(out / ("report_tau" + std::string(t) + ".json")));
      CHECK(fs::exists(out / ("report_tau" + std::string(t) + ".txt")));
    }
    CHECK(fs::exists(out / "bins.json"));
    CHECK(fs::exists(out / "diagnostics.json"));
    std::ifstream in(out / "report_tau90.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["report"].contains("actions"));
    CHECK(j["tau"] == 90.0);

    // Frozen bins reproduce the same report.
    const auto out2 = dir / "out2";
    REQUIRE(run("analyze --data " + data.string() + " --tau 90 --iterations 60 --burn-in 20 --thin 2 " +
                "--bins " + (out / "bins.json").string() + " --out " + out2.string()) == 0);
    std::ifstream a(out / "report_tau90.txt"), b(out2 / "report_tau90.txt");
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    fs::remove_all(dir);
  }

  TEST_CASE("simulate and tune write their summaries") {
    const auto dir = scratch("sim");
    const std::string chain = " --iterations 40 --burn-in 20 --thin 2 --mc-size 20000 --n 40 ";
    REQUIRE(run("simulate --scenario E2 --effect-tte 0.4 --reps 2" + chain + "--out " + (dir / "s").string()) == 0);
    CHECK(fs::exists(dir / "s" / "oc.csv"));
    CHECK(fs::exists(dir / "s" / "config.json"));
    std::ifstream oc(dir / "s" / "oc.csv");
    std::string header, row;
    std::getline(oc, header);
    std::getline(oc, row);
    CHECK(header.find("tdr") != std::string::npos);
    CHECK_FALSE(row.empty());
    REQUIRE(run("tune --reps 20 --nu-grid 0.25 0.5" + chain + "--out " + (dir / "t").string()) == 0);
    std::ifstream in(dir / "t" / "tune.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j.dump().find("u0") != std::string::npos);
    fs::remove_all(dir);
  }
}
