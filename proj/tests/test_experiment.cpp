#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uaro/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace uaro;
namespace fs = std::filesystem;

namespace {

experiment::ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return experiment::parseConfig(in);
}

std::string tempDir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("uaro_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// value column for one metric row of a summary CSV
std::string metric(const std::string& csv, const std::string& key) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + ",", 0) == 0) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      return line.substr(c1 + 1, c2 - c1 - 1);
    }
  }
  return "";
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse(
      "# comment\n"
      "system = toy-integrator\n"
      "runs = 5\n"
      "seed = 42   ; trailing comment\n"
      "zero_disturbance = true\n");
  CHECK(cfg.system == "toy-integrator");
  CHECK(cfg.runs == 5);
  CHECK(cfg.seed == 42);
  CHECK(cfg.zeroDisturbance);
  CHECK(cfg.controller == "both");  // default survives

  SUBCASE("unknown keys are rejected with the line number") {
    try {
      parse("system = quadrotor\nbogus = 1\n");
      FAIL("expected ConfigError");
    } catch (const experiment::ConfigError& e) {
      CHECK(e.line == 2);
      CHECK(e.field == "bogus");
    }
  }
  SUBCASE("bad values are rejected") {
    CHECK_THROWS_AS(parse("runs = zero\n"), experiment::ConfigError);
    CHECK_THROWS_AS(parse("runs = 0\n"), experiment::ConfigError);
    CHECK_THROWS_AS(parse("c = -1\n"), experiment::ConfigError);
    CHECK_THROWS_AS(parse("controller = lqr\n"), experiment::ConfigError);
    CHECK_THROWS_AS(parse("system ="), experiment::ConfigError);
    CHECK_THROWS_AS(parse("no equals sign\n"), experiment::ConfigError);
  }
}

TEST_CASE("overrides and system building") {
  auto cfg = parse("system = quadrotor\nc = 0.1\n");
  experiment::applyOverride(cfg, "runs=3");
  CHECK(cfg.runs == 3);
  CHECK_THROWS_AS(experiment::applyOverride(cfg, "nope=1"),
                  experiment::ConfigError);

  const auto m = experiment::buildSystem(cfg);
  CHECK(m.name == "quadrotor");
  CHECK(m.N == 5);

  cfg.horizon = 3;
  CHECK(experiment::buildSystem(cfg).N == 3);
  cfg.horizon = 9;
  CHECK_THROWS_AS(experiment::buildSystem(cfg), experiment::ConfigError);
}

TEST_CASE("run command on the nominal toy") {
  auto cfg = parse(
      "system = toy-integrator\n"
      "controller = both\n"
      "runs = 1\n"
      "zero_disturbance = true\n");
  cfg.outDir = tempDir("run_toy");
  std::ostringstream log;
  CHECK(experiment::cmdRun(cfg, log) == 0);

  const std::string us = slurp(cfg.outDir + "/uaro_summary.csv");
  const std::string rs = slurp(cfg.outDir + "/ro_summary.csv");
  CHECK(std::stod(metric(us, "mean_gamma0")) == doctest::Approx(0.25).epsilon(2e-3));
  CHECK(std::stod(metric(rs, "mean_gamma0")) == doctest::Approx(1.0).epsilon(2e-3));

  SUBCASE("trace files re-validate against the dynamics") {
    const auto m = experiment::buildSystem(cfg);
    std::ifstream tr(cfg.outDir + "/uaro_trace.csv");
    std::string line;
    std::getline(tr, line);  // header
    Eigen::VectorXd x = m.initialState;
    while (std::getline(tr, line)) {
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      double run, k, gamma, u, w, xn, ns, ms;
      ss >> run >> k >> gamma >> u >> w >> xn >> ns >> ms;
      Eigen::VectorXd uv(1), wv(1);
      uv << u;
      wv << w;
      x = model::step(m, static_cast<int>(k), x, uv, wv);
      CHECK(std::abs(x(0) - xn) < 1e-9);
    }
  }

  SUBCASE("summaries are deterministic apart from the wall column") {
    auto cfg2 = cfg;
    cfg2.outDir = tempDir("run_toy_repeat");
    std::ostringstream log2;
    REQUIRE(experiment::cmdRun(cfg2, log2) == 0);
    auto stripWall = [](std::string s) {
      std::string out;
      std::istringstream in(s);
      std::string line;
      while (std::getline(in, line)) {
        const auto c2 = line.rfind(',');
        out += line.substr(0, c2) + "\n";
      }
      return out;
    };
    CHECK(stripWall(slurp(cfg.outDir + "/uaro_summary.csv")) ==
          stripWall(slurp(cfg2.outDir + "/uaro_summary.csv")));
  }
}

TEST_CASE("run command reports open-loop infeasibility with exit 2") {
  auto cfg = parse(
      "system = toy-feas\n"
      "controller = ro\n"
      "runs = 1\n");
  cfg.outDir = tempDir("run_feas");
  std::ostringstream log;
  CHECK(experiment::cmdRun(cfg, log) == 2);
  CHECK(log.str().find("infeasible at k = 0") != std::string::npos);
}

TEST_CASE("compare command") {
  auto cfg = parse(
      "system = toy-integrator\n"
      "controller = uaro\n"
      "runs = 1\n"
      "zero_disturbance = true\n");
  cfg.outDir = tempDir("cmp");
  std::ostringstream log;
  REQUIRE(experiment::cmdRun(cfg, log) == 0);
  const std::string path = cfg.outDir + "/uaro_summary.csv";

  SUBCASE("identical files have zero differences") {
    std::ostringstream out;
    CHECK(experiment::cmdCompare(path, path, out) == 0);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::istringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() >= 4 && !cells[3].empty())
        CHECK(std::stod(cells[3]) == 0.0);
    }
  }
  SUBCASE("schema mismatch is an error") {
    const std::string other = cfg.outDir + "/broken.csv";
    std::ofstream f(other);
    f << "metric,value,wall_ms\nsomething,1,\n";
    f.close();
    std::ostringstream out;
    CHECK(experiment::cmdCompare(path, other, out) == 1);
  }
}

TEST_CASE("certify command") {
  auto cfg = parse("system = toy-integrator\n");
  const std::string dir = tempDir("cert");
  const std::string controls = dir + "/u.txt";
  {
    std::ofstream f(controls);
    f << "0 0\n";
  }
  std::ostringstream out;
  CHECK(experiment::cmdCertify(cfg, controls, out) == 0);
  CHECK(out.str().find("certified") == 0);

  auto feasCfg = parse("system = toy-feas\n");
  std::ostringstream out2;
  CHECK(experiment::cmdCertify(feasCfg, controls, out2) == 2);
  CHECK(out2.str().find("witness") != std::string::npos);

  SUBCASE("dimension mismatch") {
    const std::string bad = dir + "/bad.txt";
    std::ofstream f(bad);
    f << "0 0 0\n";
    f.close();
    std::ostringstream out3;
    CHECK(experiment::cmdCertify(cfg, bad, out3) == 1);
  }
}

TEST_CASE("summary roundtrip") {
  auto cfg = parse(
      "system = toy-integrator\ncontroller = uaro\nruns = 1\n"
      "zero_disturbance = true\n");
  cfg.outDir = tempDir("roundtrip");
  std::ostringstream log;
  REQUIRE(experiment::cmdRun(cfg, log) == 0);
  const auto map = experiment::readSummaryCsv(cfg.outDir + "/uaro_summary.csv");
  CHECK(map.at("controller") == "uaro");
  CHECK(map.at("runs") == "1");
  CHECK(map.count("wall") == 0);
}
