#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mfc/cli.hpp"
#include "mfc/scenario.hpp"

using namespace mfc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mfc_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

nlohmann::json report(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "report.json")); }

}  // namespace

TEST(Cli, ListScenarios) {
  const Outcome r = run({"list-scenarios"});
  EXPECT_EQ(r.code, kExitOk);
  for (const auto& n : builtin_names()) EXPECT_NE(r.out.find(n), std::string::npos) << n;
}

TEST(Cli, UnknownFlagIsConfigError) {
  const Outcome r = run({"simulate", "--scenario", "zero-drift", "--seed", "1", "--bogus"});
  EXPECT_EQ(r.code, kExitConfigError);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
}

TEST(Cli, MissingSubcommandOrSeed) {
  EXPECT_EQ(run({}).code, kExitConfigError);
  const fs::path dir = scratch("noseed");
  EXPECT_EQ(run({"simulate", "--scenario", "zero-drift", "--out", dir.string()}).code, kExitConfigError);
}

TEST(Cli, BadConfigurationValues) {
  const fs::path dir = scratch("badcfg");
  const std::string out = dir.string();
  EXPECT_EQ(run({"simulate", "--scenario", "nope", "--seed", "1", "--out", out}).code, kExitConfigError);
  EXPECT_EQ(run({"simulate", "--scenario", "zero-drift", "--seed", "1", "--particles", "50", "--out", out}).code,
            kExitConfigError);
  EXPECT_EQ(run({"fixpoint", "--scenario", "zero-drift", "--seed", "1", "--tol", "-1", "--out", out}).code,
            kExitConfigError);
  EXPECT_EQ(run({"evaluate", "--scenario", "linear-quadratic", "--seed", "1", "--control", "spline:3", "--out", out}).code,
            kExitConfigError);
}

TEST(Cli, SimulateWritesReportAndTables) {
  const fs::path dir = scratch("simulate");
  const Outcome r = run({"simulate", "--scenario", "zero-drift", "--seed", "4", "--particles", "500", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = report(dir);
  EXPECT_EQ(j["command"], "simulate");
  EXPECT_TRUE(j.contains("version"));
  EXPECT_TRUE(j.contains("validation"));
  EXPECT_EQ(j["config"]["seed"], 4);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_TRUE(fs::exists(dir / "paths.csv"));
  EXPECT_TRUE(fs::exists(dir / "timing.json"));
}

TEST(Cli, EvaluateReportsEstimatesWithErrors) {
  const fs::path dir = scratch("evaluate");
  const Outcome r = run({"evaluate", "--scenario", "linear-quadratic", "--seed", "3", "--particles", "2000",
                     "--control", "constant:0.5", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto res = report(dir)["results"];
  for (const char* key : {"payoff", "bsde_y0", "identity_gap"}) {
    ASSERT_TRUE(res.contains(key)) << key;
    EXPECT_TRUE(res[key].contains("se")) << key;
  }
  EXPECT_NEAR(res["payoff"]["value"].get<double>(), 0.625, 3.0 * res["payoff"]["se"].get<double>());
}

TEST(Cli, ConfigFileScenario) {
  const fs::path dir = scratch("config");
  fs::create_directories(dir);
  const fs::path cfg = dir / "lq.json";
  std::ofstream(cfg) << serialize_scenario(builtin_scenario("linear-quadratic"));
  const Outcome r = run({"fixpoint", "--config", cfg.string(), "--seed", "2", "--particles", "500",
                     "--control", "constant:-1", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;

  std::ofstream(dir / "broken.json") << R"({"dimension": 1})";
  const Outcome bad = run({"fixpoint", "--config", (dir / "broken.json").string(), "--seed", "2", "--out",
                       (dir / "out2").string()});
  EXPECT_EQ(bad.code, kExitConfigError);
  EXPECT_NE(bad.err.find("actions_u"), std::string::npos) << bad.err;
}

TEST(Cli, MeanFieldFixpoint) {
  const fs::path dir = scratch("fixpoint");
  const Outcome r = run({"fixpoint", "--scenario", "mean-field-mean-reversion", "--seed", "5", "--particles", "2000",
                     "--control", "constant:1", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir / "fixpoint_distances.csv"));
  EXPECT_TRUE(fs::exists(dir / "flow.csv"));
}

TEST(Cli, BilinearGameFailsIsaacs) {
  const fs::path dir = scratch("bilinear");
  const Outcome r = run({"game", "--scenario", "bilinear-game", "--seed", "1", "--particles", "1000", "--out", dir.string()});
  EXPECT_EQ(r.code, kExitCheckFailed);
  EXPECT_NE(r.err.find("Isaacs"), std::string::npos) << r.err;
  const auto j = report(dir);
  EXPECT_FALSE(j["passed"].get<bool>());
  EXPECT_EQ(j["results"]["saddle"]["isaacs_gap"]["max_gap"]["value"].get<double>(), 2.0);
}

TEST(Cli, SeparatedGameSucceeds) {
  const fs::path dir = scratch("separated");
  const Outcome r = run({"game", "--scenario", "separated-game", "--seed", "2", "--particles", "2000", "--out", dir.string()});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_TRUE(fs::exists(dir / "saddle_u_slacks.csv"));
}

TEST(Cli, OptimizeLinearQuadratic) {
  const fs::path dir = scratch("optimize");
  const Outcome r = run({"optimize", "--scenario", "linear-quadratic", "--seed", "6", "--particles", "2000", "--out",
                     dir.string()});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_TRUE(fs::exists(dir / "comparison.csv"));
}

TEST(Cli, VerifyLinearQuadratic) {
  const fs::path dir = scratch("verify");
  const Outcome r = run({"verify", "--scenario", "linear-quadratic", "--seed", "7", "--particles", "10000", "--out",
                     dir.string()});
  EXPECT_EQ(r.code, kExitOk) << r.out;
  EXPECT_NE(r.out.find("PASS linear-quadratic: payoff identity"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("PASS linear-quadratic: comparison"), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST(Cli, ReportsAreByteIdentical) {
  const fs::path a = scratch("repro_a"), b = scratch("repro_b");
  for (const auto& dir : {a, b}) {
    ASSERT_EQ(run({"evaluate", "--scenario", "mean-field-mean-reversion", "--seed", "11", "--particles", "1000",
                   "--control", "linear:0.2,-0.5,0.1", "--out", dir.string()})
                  .code,
              kExitOk);
  }
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
}

TEST(Cli, SeedChangesResults) {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  run({"simulate", "--scenario", "zero-drift", "--seed", "1", "--particles", "200", "--out", a.string()});
  run({"simulate", "--scenario", "zero-drift", "--seed", "2", "--particles", "200", "--out", b.string()});
  EXPECT_NE(slurp(a / "paths.csv"), slurp(b / "paths.csv"));
}
