#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "lyapan/scenario.hpp"

using namespace lyapan;
namespace fs = std::filesystem;

namespace {

Json parse(const std::string& text) { return Json::parse(text); }

const char* kDirac = R"({
  "name": "dirac", "kind": "bernoulli",
  "measure": [{"matrix": [[2, 0], [0, 0.5]], "weight": 1.0}],
  "analyses": ["lyapunov"],
  "config": {"tol": 1e-10, "mc_steps": 200, "mc_trials": 20, "furstenberg_particles": 20,
             "furstenberg_burn_in": 10, "furstenberg_iters": 100}
})";

const char* kSwapMarkov = R"({
  "name": "swap", "kind": "markov",
  "kernel": {"states": 2,
             "rows": [[{"to": 1, "w_re": 1.0}], [{"to": 0, "w_re": 1.0}]],
             "cocycle": [[[[1, 0], [0, 1]], [[2, 0], [0, 1]]], [[[2, 0], [0, 1]], [[1, 0], [0, 1]]]]},
  "analyses": ["lyapunov", "reducibility"]
})";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lyapan_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LYAPAN_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Scenario, MinimalDiracGivesLogTwo) {
  const auto run = run_scenario(parse_scenario(parse(kDirac)));
  EXPECT_FALSE(run.any_error);
  const auto& r = run.report["results"]["lyapunov"];
  EXPECT_NEAR(r["L1"].get<double>(), std::log(2.0), 1e-10);
  EXPECT_EQ(run.report["status"], "ok");
  EXPECT_EQ(run.report["scenario"], "dirac");
  EXPECT_TRUE(r.contains("monte_carlo"));
  EXPECT_TRUE(r.contains("second_exponent"));
}

TEST(Scenario, TaylorPullsInTheCertificate) {
  auto j = parse(R"({
    "kind": "bernoulli",
    "measure": [{"matrix": [[2, 0], [0, 0.5]], "weight": 0.5}, {"matrix": [[1, 0], [0, 3]], "weight": 0.5}],
    "analyses": ["taylor"],
    "config": {"taylor_radius": 0.1, "cert_n_max": 3}
  })");
  const auto run = run_scenario(parse_scenario(j));
  EXPECT_EQ(run.report["executed"], Json::array({"certify", "taylor"}));
  EXPECT_EQ(run.report["requested"], Json::array({"taylor"}));
  const auto& res = run.report["results"];
  ASSERT_TRUE(res.contains("certify"));
  EXPECT_TRUE(res["certify"]["auto_inserted"].get<bool>());
  ASSERT_TRUE(res.contains("taylor"));
  EXPECT_FALSE(res["taylor"].contains("error")) << res["taylor"].dump();
}

TEST(Scenario, SingularMatrixNamesTheAtom) {
  auto j = parse(R"({
    "kind": "bernoulli",
    "measure": [{"matrix": [[2, 0], [0, 0.5]], "weight": 0.5}, {"matrix": [[1, 2], [2, 4]], "weight": 0.5}],
    "analyses": ["lyapunov"]
  })");
  try {
    parse_scenario(j);
    FAIL() << "singular matrix accepted";
  } catch (const ScenarioError& e) {
    EXPECT_NE(std::string(e.what()).find("measure[1].matrix"), std::string::npos) << e.what();
  }
}

TEST(Scenario, WeightSpellingsAgree) {
  for (const char* w : {R"("weight": [0.25, -0.5])", R"("weight": {"re": 0.25, "im": -0.5})",
                        R"("weight_re": 0.25, "weight_im": -0.5)"}) {
    const auto sc = parse_scenario(parse(std::string(R"({"measure": [{"matrix": [[1, 0], [0, 1]], )") + w +
                                         R"(}], "analyses": []})"));
    ASSERT_EQ(sc.measure.size(), 1u);
    EXPECT_EQ(sc.measure.atoms()[0].weight, Complex(0.25, -0.5)) << w;
  }
  const auto real = parse_scenario(parse(R"({"measure": [{"matrix": [[1]], "weight_re": 0.5}], "analyses": []})"));
  EXPECT_EQ(real.measure.atoms()[0].weight, Complex(0.5, 0.0));
}

TEST(Scenario, RejectsMalformedInput) {
  auto message = [](const std::string& text) {
    try {
      parse_scenario(parse(text));
    } catch (const ScenarioError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  EXPECT_NE(message(R"({"measure": [{"matrix": [[1, 0], [0, 1]], "weight": 1}], "analyses": ["spectrum"]})")
                .find("analyses[0]"),
            std::string::npos);
  EXPECT_NE(message(R"({"measure": [{"matrix": [[1, 0], [0]], "weight": 1}], "analyses": []})")
                .find("measure[0].matrix[1]"),
            std::string::npos);
  EXPECT_NE(message(R"({"kind": "hmm", "analyses": []})").find("kind"), std::string::npos);
  EXPECT_NE(message(R"({"kind": "markov", "kernel": {"states": 2, "rows": [[], []], "cocycle": [[]]}, "analyses": []})")
                .find("kernel.cocycle"),
            std::string::npos);
  EXPECT_NE(message(R"({"measure": [{"matrix": [[1]], "weight": 1}], "analyses": [], "config": {"tol": "x"}})")
                .find("config.tol"),
            std::string::npos);
}

TEST(Scenario, AnalysisErrorsDoNotAbortSiblings) {
  const auto run = run_scenario(parse_scenario(parse(kSwapMarkov)));
  EXPECT_TRUE(run.any_error);
  EXPECT_EQ(run.report["status"], "error");
  const auto& res = run.report["results"];
  ASSERT_TRUE(res["lyapunov"].contains("error"));
  EXPECT_EQ(res["lyapunov"]["error"]["type"], "domain");
  EXPECT_FALSE(res["reducibility"].contains("error"));
  EXPECT_EQ(res["reducibility"]["status"], "found");
}

TEST(Scenario, NoncompactDemoReport) {
  auto j = parse(R"({"measure": [{"matrix": [[0.7648421872844885, -0.644217687237691],
                                                [0.644217687237691, 0.7648421872844885]], "weight": 1}],
                     "analyses": ["demo_noncompact"], "config": {"eps": 0.1, "jump": 1}})");
  const auto run = run_scenario(parse_scenario(j));
  const auto& r = run.report["results"]["demo_noncompact"];
  EXPECT_GT(r["log_a"].get<double>(), 10.0);
  EXPECT_TRUE(r["exceeds"].get<bool>());
  EXPECT_LE(r["tv_distance"].get<double>(), 0.2 + 1e-15);
  EXPECT_TRUE(r["monotone_in_eps"].get<bool>());
}

TEST(Scenario, ReportsAreByteIdenticalAcrossRuns) {
  const auto sc = parse_scenario(parse(kDirac));
  const fs::path a = fresh_dir("repeat_a"), b = fresh_dir("repeat_b");
  write_outputs(run_scenario(sc), a, {OutputFormat::report, OutputFormat::csv, OutputFormat::svg});
  write_outputs(run_scenario(sc), b, {OutputFormat::report, OutputFormat::csv, OutputFormat::svg});
  for (const char* f : {"report.json", "summary.csv", "lyapunov_trace.csv", "lyapunov_trace.svg"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "timings.json"));
  EXPECT_EQ(slurp(a / "summary.csv").rfind("analysis,quantity,value\n", 0), 0u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Scenario, FormatSelection) {
  const fs::path dir = fresh_dir("formats");
  write_outputs(run_scenario(parse_scenario(parse(kDirac))), dir, {OutputFormat::csv});
  EXPECT_FALSE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_FALSE(fs::exists(dir / "lyapunov_trace.svg"));
  fs::remove_all(dir);
}

TEST(Scenario, ShippedScenariosParse) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(LYAPAN_SCENARIO_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_scenario(e.path())) << e.path();
    ++count;
  }
  EXPECT_GE(count, 5);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  const fs::path ok = dir / "dirac.json", bad = dir / "bad.json", failing = dir / "swap.json";
  std::ofstream(ok) << kDirac;
  std::ofstream(bad) << R"({"measure": [{"matrix": [[1, 1], [1, 1]], "weight": 1}], "analyses": ["lyapunov"]})";
  std::ofstream(failing) << kSwapMarkov;
  const std::string out = " --out-dir " + (dir / "out").string();

  EXPECT_EQ(run_cli("run " + ok.string() + out), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "dirac" / "report.json"));
  EXPECT_EQ(run_cli("run " + bad.string() + out), 2);
  EXPECT_EQ(run_cli("run " + failing.string() + out), 1);
  EXPECT_TRUE(fs::exists(dir / "out" / "swap" / "report.json"));  // partial report still written
  EXPECT_EQ(run_cli("run " + ok.string() + " --format report --seed 5 --tol 1e-9" + out), 0);
  EXPECT_EQ(run_cli("--version"), 0);
  EXPECT_NE(run_cli("run"), 0);

  fs::remove(bad);
  EXPECT_EQ(run_cli("batch " + dir.string() + out), 1);  // worst of ok and swap
  fs::remove(failing);
  EXPECT_EQ(run_cli("batch " + dir.string() + out), 0);
  EXPECT_EQ(run_cli("demo noncompact --eps 0.1 --jump 1"), 0);
  fs::remove_all(dir);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path dir = fresh_dir("env");
  std::ofstream(dir / "dirac.json") << kDirac;
  const std::string cmd = "LYAPAN_OUT_DIR=" + (dir / "env_out").string() + " " + LYAPAN_CLI + " run " +
                          (dir / "dirac.json").string() + " > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "env_out" / "dirac" / "report.json"));
  fs::remove_all(dir);
}
