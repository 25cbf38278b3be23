#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "deepbsde/config.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CmdResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path dir = fs::path(testing::TempDir()) / ("cli_io_" + std::to_string(counter++));
  fs::create_directories(dir);
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = env_prefix + " \"" DEEPBSDE_CLI_PATH "\" " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int rc = std::system(cmd.c_str());
  CmdResult res;
  res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  res.out = slurp(out);
  res.err = slurp(err);
  return res;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path path = fs::path(testing::TempDir()) / name;
  std::ofstream os(path);
  os << text;
  return path;
}

}  // namespace

TEST(Cli, RunWritesTraceSummaryAndParams) {
  const fs::path out_dir = fs::path(testing::TempDir()) / "run_artifacts";
  const fs::path cfg = write_config("run_small.cfg",
                                    "problem.kind = frozen_test\n"
                                    "problem.g_const = 0.5\n"
                                    "train.M = 16\n"
                                    "train.N = 4\n"
                                    "train.iterations = 6\n"
                                    "train.repeats = 2\n"
                                    "train.checkpoints = 3,6\n"
                                    "output.dir = " + out_dir.string() + "\n");
  const CmdResult res = run_cli("run " + cfg.string());
  EXPECT_EQ(res.exit_code, 0) << res.err;
  const std::string summary = slurp(out_dir / "summary.csv");
  EXPECT_EQ(summary.rfind("step,mean_y0,std_y0,mean_loss,std_loss\n", 0), 0u);
  EXPECT_NE(summary.find("\n3,"), std::string::npos);
  EXPECT_NE(summary.find("\n6,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out_dir / "trace_run0.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "trace_run1.csv"));
  EXPECT_TRUE(fs::exists(out_dir / "params_run0.bin"));
  EXPECT_NE(res.out.find("mean_y0"), std::string::npos);
}

TEST(Cli, ZeroIterationsSummarizesInitialState) {
  const fs::path out_dir = fs::path(testing::TempDir()) / "run_zero";
  const fs::path cfg = write_config("run_zero.cfg",
                                    "problem.kind = frozen_test\n"
                                    "train.M = 16\n"
                                    "train.N = 4\n"
                                    "train.iterations = 0\n"
                                    "train.repeats = 1\n"
                                    "output.dir = " + out_dir.string() + "\n");
  const CmdResult res = run_cli("run " + cfg.string());
  EXPECT_EQ(res.exit_code, 0) << res.err;
  const std::string summary = slurp(out_dir / "summary.csv");
  EXPECT_NE(summary.find("\n0,"), std::string::npos);
}

TEST(Cli, UnknownKeyNamesTheKeyAndExitsWithConfigCode) {
  const fs::path cfg = write_config("typo.cfg",
                                    "problem.kind = cir1d\n"
                                    "train.lrr = 0.01\n");
  const CmdResult res = run_cli("run " + cfg.string());
  EXPECT_EQ(res.exit_code, 1);
  EXPECT_NE(res.err.find("train.lrr"), std::string::npos);
}

TEST(Cli, MissingConfigFileExitsWithConfigCode) {
  const CmdResult res = run_cli("run /nonexistent/deepbsde.cfg");
  EXPECT_EQ(res.exit_code, 1);
}

TEST(Cli, SeedOverrideChangesTheRun) {
  const fs::path d1 = fs::path(testing::TempDir()) / "seed_a";
  const fs::path d2 = fs::path(testing::TempDir()) / "seed_b";
  const std::string base =
      "problem.kind = frozen_test\n"
      "train.M = 16\ntrain.N = 4\ntrain.iterations = 5\ntrain.repeats = 1\n"
      "train.checkpoints = 5\n";
  const fs::path cfg = write_config("seed.cfg", base + "output.dir = unused\n");
  const CmdResult r1 = run_cli("run " + cfg.string() + " --seed 1 --out " + d1.string());
  const CmdResult r2 = run_cli("run " + cfg.string() + " --seed 2 --out " + d2.string());
  EXPECT_EQ(r1.exit_code, 0);
  EXPECT_EQ(r2.exit_code, 0);
  EXPECT_NE(slurp(d1 / "summary.csv"), slurp(d2 / "summary.csv"));
  EXPECT_TRUE(fs::exists(d1 / "trace_run0.csv"));  // --out override honored
}

TEST(Cli, ValidateAnalyticDeterministicLimit) {
  // sigma = a = 0: both prices are exactly exp(-T x0)
  const fs::path cfg = write_config("validate_det.cfg",
                                    "problem.kind = cir1d\n"
                                    "problem.a = 0\nproblem.b = 1\nproblem.sigma = 0\n");
  const CmdResult res = run_cli("validate-analytic " + cfg.string());
  EXPECT_EQ(res.exit_code, 0) << res.out << res.err;
  EXPECT_NE(res.out.find("[PASS]"), std::string::npos);
  EXPECT_NE(res.out.find("0.3678794"), std::string::npos);
}

TEST(Cli, ValidateAnalyticRejectsNonScalarProblems) {
  const fs::path cfg = write_config("validate_multi.cfg",
                                    "problem.kind = cir_multi\nproblem.n = 3\n"
                                    "problem.param_seed = 0\n");
  const CmdResult res = run_cli("validate-analytic " + cfg.string());
  EXPECT_EQ(res.exit_code, 1);
}

TEST(Cli, GradCheckPasses) {
  const fs::path cfg = write_config("gradcheck.cfg", "problem.kind = cir1d\n");
  const CmdResult res = run_cli("grad-check " + cfg.string());
  EXPECT_EQ(res.exit_code, 0) << res.out << res.err;
  EXPECT_NE(res.out.find("[PASS]"), std::string::npos);
}

TEST(Cli, BundledConfigsParse) {
  const fs::path dir(DEEPBSDE_CONFIG_DIR);
  const deepbsde::FileConfig c1 = deepbsde::parse_config_file((dir / "cir1d.cfg").string());
  EXPECT_EQ(c1.kind, "cir1d");
  EXPECT_EQ(c1.train.M, 1000);
  EXPECT_EQ(c1.train.N, 100);
  EXPECT_EQ(c1.train.iterations, 3000);
  EXPECT_EQ(c1.train.repeats, 10);

  const deepbsde::FileConfig c2 =
      deepbsde::parse_config_file((dir / "cir_multi_n10.cfg").string());
  EXPECT_EQ(c2.kind, "cir_multi");
  EXPECT_EQ(c2.n, 10);
  EXPECT_TRUE(c2.param_seed.has_value());

  const deepbsde::FileConfig c3 =
      deepbsde::parse_config_file((dir / "cir_multi_n100.cfg").string());
  EXPECT_EQ(c3.n, 100);
  EXPECT_EQ(c3.d, 1);
}
