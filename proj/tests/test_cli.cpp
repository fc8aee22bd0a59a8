#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pelab/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  json summary;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pelab_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run run_cli(const std::string& args, const fs::path& out_dir, bool via_env = false) {
  std::string cmd = via_env ? "PELAB_OUTPUT_DIR='" + out_dir.string() + "' " : std::string();
  cmd += std::string(PELAB_CLI_PATH) + " " + args;
  if (!via_env) cmd += " --output-dir '" + out_dir.string() + "'";
  cmd += " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t k = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), k);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.summary = json::parse(r.out, nullptr, false);
  return r;
}

std::string config(const std::string& name) { return std::string(PELAB_CONFIG_DIR) + "/" + name; }

const json& check_named(const json& s, const std::string& name) {
  for (const auto& c : s["checks"])
    if (c["name"] == name) return c;
  static const json none;
  return none;
}

}  // namespace

TEST(Weights, FiveDimensionalMixedRanks) {
  const auto r = run_cli("weights --n 5 --ranks 1,2", scratch("w5"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_DOUBLE_EQ(r.summary["mu0"].get<double>(), 3.0);
  EXPECT_EQ(r.summary["status"], "pass");
  EXPECT_EQ(r.summary["cusps"].size(), 2u);
}

TEST(Weights, RankTwoInFourDimensionsObstructs) {
  const auto r = run_cli("weights --n 4 --ranks 2", scratch("w4r2"));
  ASSERT_EQ(r.code, 2);
  const std::string reason = r.summary["obstruction"]["reason"];
  EXPECT_NE(reason.find("rank-2 cusp in n=4"), std::string::npos) << reason;
  EXPECT_EQ(r.summary["status"], "obstruction");
}

TEST(Weights, MaximalRankObstructs) {
  for (const std::string args : {"--n 4 --ranks 3", "--n 5 --ranks 1,4", "--n 3 --ranks 2"}) {
    const auto r = run_cli("weights " + args, scratch("wmax"));
    EXPECT_EQ(r.code, 2) << args;
  }
}

TEST(Weights, GivenMu0ReportsCuspWindow) {
  const auto r = run_cli("weights --n 4 --ranks 1 --mu0 1.75", scratch("wmu"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.summary["mu0_rule"], "given");
  const auto& w = r.summary["cusps"][0]["window"];
  EXPECT_NEAR(w["lo"].get<double>(), 0.0, 1e-15);
  EXPECT_NEAR(w["hi"].get<double>(), 0.8228756555322954, 1e-12);
}

TEST(Weights, Mu0OutsideWindowHasNoWeights) {
  const auto r = run_cli("weights --n 4 --ranks 1 --mu0 2.5", scratch("wout"));
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.summary["weights"].is_null());
}

TEST(Usage, BadInputsExitOne) {
  const fs::path d = scratch("usage");
  EXPECT_EQ(run_cli("", d).code, 1);
  EXPECT_EQ(run_cli("weights --n four", d).code, 1);
  EXPECT_EQ(run_cli("weights --n 4 --ranks 0", d).code, 1);
  EXPECT_EQ(run_cli("sweep --eps 0.1,0.2", d).code, 1);
  EXPECT_EQ(run_cli("curvature --step -1", d).code, 1);
  EXPECT_EQ(run_cli("solve --chart torus", d).code, 1);
  EXPECT_EQ(run_cli("expand --n 5", d).code, 1);
  EXPECT_EQ(run_cli("weights --config /nonexistent/file.conf", d).code, 1);
  const auto r = run_cli("solve --chart torus", d);
  EXPECT_EQ(r.summary["error"]["type"], "InvalidArgument");
}

TEST(Curvature, DefaultRunPasses) {
  const fs::path d = scratch("curv");
  const auto r = run_cli("curvature", d);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_GE(r.summary["samples"].get<int>(), 200);
  EXPECT_EQ(r.summary["orders"].size(), 4u);
  EXPECT_TRUE(fs::exists(d / "curvature.csv"));
  EXPECT_TRUE(fs::exists(d / "curvature.json"));
}

TEST(Curvature, PerturbedMetricFails) {
  const auto r = run_cli("curvature --perturb --samples 40", scratch("curvp"));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.summary["status"], "fail");
}

TEST(Curvature, FlatMetricHasZeroRicci) {
  const auto r = run_cli("curvature --flat --samples 40", scratch("curvf"));
  ASSERT_EQ(r.code, 0);
  EXPECT_LT(r.summary["checks"][0]["value"].get<double>(), 1e-12);
}

TEST(Solve, ManufacturedSolution) {
  const auto r = run_cli("solve --chart cusp --n 4 --f 1", scratch("solve"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.summary["method"], "pcg-jacobi");
  EXPECT_LE(check_named(r.summary, "manufactured-solution error")["value"].get<double>(), 1e-6);
}

TEST(Solve, IndefiniteOperatorReportsNonConvergence) {
  const fs::path d = scratch("indef");
  const auto r = run_cli("solve --K -40", d);
  ASSERT_EQ(r.code, 3);
  EXPECT_EQ(r.summary["error"]["type"], "NonConvergence");
  EXPECT_EQ(r.summary["error"]["reason"], "indefinite");
  EXPECT_TRUE(fs::exists(d / "solve.json"));

  const auto lu = run_cli("solve --K -40 --allow-indefinite", d);
  EXPECT_EQ(lu.code, 0);
  EXPECT_EQ(lu.summary["method"], "sparse-lu");
}

TEST(Solve, IterationCapReportsNonConvergence) {
  const auto r = run_cli("solve --max-iterations 3", scratch("cap"));
  ASSERT_EQ(r.code, 3);
  EXPECT_EQ(r.summary["error"]["reason"], "iteration-cap");
}

TEST(Solve, ChartFile) {
  const auto r = run_cli("solve --n 4 --chart-file " + config("chart_cusp_n4.conf"), scratch("cf"));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Sweep, CuspPlateau) {
  const fs::path d = scratch("sweep");
  const auto r = run_cli("sweep --chart cusp --n 4 --f 1 --K -2 --weights auto "
                       "--eps 0.2,0.1,0.05,0.025",
                       d);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LE(r.summary["plateau_factor"].get<double>(), 2.0);
  EXPECT_EQ(r.summary["rows"].size(), 4u);
  std::ifstream csv(d / "sweep.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "eps,unknowns,iterations,norm_u,norm_f,ratio,residual,mms_error");
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 4);
}

TEST(Sweep, MaximalChartObstructs) {
  EXPECT_EQ(run_cli("sweep --chart maximal", scratch("sweepmax")).code, 2);
}

TEST(Sweep, ExplicitWeights) {
  const auto r = run_cli("sweep --weights 1.75,0.5 --eps 0.1,0.05", scratch("sweepw"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_DOUBLE_EQ(r.summary["weights"]["mu0"].get<double>(), 1.75);
}

TEST(Schauder, Uniformity) {
  const fs::path d = scratch("schauder");
  const auto r = run_cli("schauder", d);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.summary["families"].size(), 3u);
  EXPECT_TRUE(fs::exists(d / "schauder.csv"));
}

TEST(Koiso, SmallRun) {
  const auto r = run_cli("koiso --refine 3 --seeds 2", scratch("koiso"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.summary["nodes"], json({17, 33, 65}));
}

TEST(Expand, LadderAndCsv) {
  const fs::path d = scratch("expand");
  const auto r = run_cli("expand --n 4 --stages 3 --seed 7", d);
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(r.summary["stages"].size(), 3u);
  EXPECT_GE(r.summary["stages"][2]["slope"].get<double>(), 2.7);
  std::ifstream csv(d / "expand.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "stage,y_index,slope,residual");
}

TEST(Config, FixturesAndFlagPrecedence) {
  const fs::path d = scratch("config");
  EXPECT_EQ(run_cli("weights --config " + config("weights_n5.conf"), d).code, 0);
  EXPECT_EQ(run_cli("weights --config " + config("weights_rank2_n4.conf"), d).code, 2);
  EXPECT_EQ(run_cli("solve --config " + config("solve_indefinite.conf"), d).code, 3);
  const auto r = run_cli("weights --config " + config("weights_n5.conf") + " --n 6", d);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.summary["n"], 6);
  EXPECT_DOUBLE_EQ(r.summary["mu0"].get<double>(), 4.0);
}

TEST(Output, EnvironmentVariableSetsDirectory) {
  const fs::path d = scratch("env");
  const auto r = run_cli("weights --n 5 --ranks 1", d, true);
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(d / "weights.json"));
  const json written = json::parse(std::ifstream(d / "weights.json"));
  EXPECT_EQ(written, r.summary);
}

TEST(Output, ChecksCarryToleranceAndAnchor) {
  const auto r = run_cli("sweep --eps 0.2,0.1", scratch("anchor"));
  ASSERT_FALSE(r.summary["checks"].empty());
  for (const auto& c : r.summary["checks"]) {
    EXPECT_TRUE(c["tolerance"].is_number());
    EXPECT_FALSE(c["anchor"].get<std::string>().empty());
    EXPECT_TRUE(c["comparison"].is_string());
  }
}

TEST(Library, DeterministicGivenSeed) {
  pelab::cli::RunConfig cfg;
  cfg.subcommand = "curvature";
  cfg.samples = 20;
  cfg.output_dir = scratch("det").string();
  json a, b;
  ASSERT_EQ(pelab::cli::run(cfg, a), 0);
  ASSERT_EQ(pelab::cli::run(cfg, b), 0);
  a.erase("seconds");
  b.erase("seconds");
  EXPECT_EQ(a, b);
}

TEST(Library, ReportComparisons) {
  pelab::cli::Report rep("x");
  EXPECT_TRUE(rep.check("a", 1.0, "<=", 1.0, "").pass);
  EXPECT_FALSE(rep.check("b", 1.0, "<", 1.0, "").pass);
  EXPECT_FALSE(rep.check("c", NAN, ">=", 0.0, "").pass);
  EXPECT_TRUE(rep.check("d", INFINITY, ">=", 2.7, "").pass);
  EXPECT_FALSE(rep.all_pass());
  const json j = rep.finish(3);
  EXPECT_EQ(j["checks"][2]["value"], "nan");
  EXPECT_EQ(j["checks"][3]["value"], "inf");
  EXPECT_THROW(pelab::cli::compare(1, "==", 1), pelab::InvalidArgument);
}
