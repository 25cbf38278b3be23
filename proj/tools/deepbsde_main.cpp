// Command-line front end: parse a run config, dispatch, emit CSV
// artifacts and a human-readable summary.
//
// Exit codes: 0 success, 1 config/usage error, 2 numerical failure
// (divergence beyond policy or a failed check), 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deepbsde/config.hpp"
#include "deepbsde/models.hpp"
#include "deepbsde/oracle.hpp"
#include "deepbsde/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

deepbsde::FileConfig load(const std::string& path, const Overrides& ov) {
  deepbsde::FileConfig cfg = deepbsde::parse_config_file(path);
  if (ov.seed) cfg.train.seed = *ov.seed;
  if (ov.out_dir) cfg.output_dir = *ov.out_dir;
  return cfg;
}

void print_sampled(const deepbsde::BuiltProblem& built, std::uint64_t param_seed) {
  std::printf("sampled CIR parameters (param_seed=%llu):\n",
              static_cast<unsigned long long>(param_seed));
  auto print_vec = [](const char* name, const std::vector<double>& v) {
    std::printf("  %s =", name);
    for (double x : v) std::printf(" %.6g", x);
    std::printf("\n");
  };
  print_vec("a", built.cir.a);
  print_vec("b", built.cir.b);
  print_vec("sigma", built.cir.sigma);
}

int cmd_run(const std::string& config_path, const Overrides& ov) {
  const deepbsde::FileConfig cfg = load(config_path, ov);
  const deepbsde::BuiltProblem built = deepbsde::build_problem(cfg);
  if (built.sampled) print_sampled(built, *cfg.param_seed);

  const deepbsde::RunStats stats = deepbsde::train_repeated(built.problem, cfg.train);

  namespace fs = std::filesystem;
  const fs::path out_dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::ios_base::failure("cannot create output dir '" + cfg.output_dir + "'");

  for (std::size_t r = 0; r < stats.runs.size(); ++r) {
    const deepbsde::RunSeries& run = stats.runs[r];
    if (!run.ok) {
      std::printf("run %zu FAILED: %s (excluded from aggregates)\n", r, run.fail_reason.c_str());
      continue;
    }
    const fs::path trace = out_dir / ("trace_run" + std::to_string(r) + ".csv");
    std::ofstream os(trace);
    if (!os) throw std::ios_base::failure("cannot write " + trace.string());
    deepbsde::write_trace_csv(os, run, stats.reference, static_cast<double>(cfg.train.N));
    if (!os) throw std::ios_base::failure("write failed for " + trace.string());
    deepbsde::save_params(run.final_params, (out_dir / ("params_run" + std::to_string(r) + ".bin")).string());
  }
  {
    const fs::path summary = out_dir / "summary.csv";
    std::ofstream os(summary);
    if (!os) throw std::ios_base::failure("cannot write " + summary.string());
    deepbsde::write_summary_csv(os, stats);
    if (!os) throw std::ios_base::failure("write failed for " + summary.string());
  }

  std::printf("%8s %12s %12s %12s %12s\n", "step", "mean_y0", "std_y0", "mean_loss", "std_loss");
  for (const deepbsde::CheckpointRow& row : stats.summary)
    std::printf("%8ld %12.6g %12.3e %12.3e %12.3e\n", row.step, row.mean_y0, row.std_y0,
                row.mean_loss, row.std_loss);
  if (stats.reference) {
    const deepbsde::CheckpointRow& last = stats.summary.back();
    std::printf("reference Y0 (%s) = %.6g, |mean - ref| at step %ld = %.3e\n",
                stats.reference_kind.c_str(), *stats.reference, last.step,
                std::abs(last.mean_y0 - *stats.reference));
    std::printf("posterior bound sqrt(mean_loss + 1/ln N) at step %ld = %.4g\n", last.step,
                deepbsde::posterior_bound(std::max(0.0, last.mean_loss),
                                          static_cast<double>(cfg.train.N)));
  }
  if (stats.failed_runs > 0)
    std::printf("%d of %zu runs failed and were excluded\n", stats.failed_runs, stats.runs.size());
  std::printf("wrote %s\n", (out_dir / "summary.csv").string().c_str());
  return kExitOk;
}

int cmd_validate_analytic(const std::string& config_path, const Overrides& ov) {
  const deepbsde::FileConfig cfg = load(config_path, ov);
  if (cfg.kind != "cir1d")
    throw deepbsde::ConfigError("validate-analytic requires problem.kind = cir1d");
  const deepbsde::CirParams params{cfg.a, cfg.b, cfg.sigma};
  const deepbsde::AnalyticCheck chk =
      deepbsde::check_analytic_vs_mc(params, cfg.T, cfg.x0[0], 100000, 1000, cfg.train.seed);
  std::printf("analytic bond price : %.8f\n", chk.analytic);
  std::printf("Monte Carlo estimate: %.8f +- %.2e (%ld paths, %d steps)\n", chk.mc.value,
              chk.mc.std_error, chk.mc.paths, chk.mc.steps);
  std::printf("difference          : %.3f standard errors\n", chk.sigmas);
  std::printf("%s analytic vs Monte Carlo within 3 standard errors\n",
              chk.pass ? "[PASS]" : "[FAIL]");
  return chk.pass ? kExitOk : kExitNumerical;
}

int cmd_grad_check(const std::string& config_path, const Overrides& ov) {
  const deepbsde::FileConfig cfg = load(config_path, ov);
  const std::uint64_t seed = cfg.train.seed;

  // fully coupled smooth problem: tight tolerance
  const deepbsde::FbsdeProblem smooth = deepbsde::make_smooth_surrogate(2, 1, 2, 1.0, 1.0, 0.4);
  const deepbsde::NetParams sp = deepbsde::init_params(seed, smooth.n, smooth.m, smooth.d);
  const deepbsde::PathBatch sbatch = deepbsde::generate(seed, 1, 8, 20, smooth.d, smooth.T);
  const deepbsde::GradCheck schk =
      deepbsde::check_gradients(smooth, sp, sbatch, 100, 1e-5, 1e-4, seed + 17);
  std::printf("smooth surrogate: max rel error %.3e over %d coordinates (threshold 1e-4)\n",
              schk.max_rel_error, schk.coords_checked);

  // 1-d CIR on a batch that stays clear of the sqrt truncation kink
  deepbsde::CirParams cir{{1.0}, {1.0}, {1.0}};
  double T = 1.0, x0 = 1.0;
  if (cfg.kind == "cir1d") {
    cir = deepbsde::CirParams{cfg.a, cfg.b, cfg.sigma};
    T = cfg.T;
    x0 = cfg.x0[0];
  }
  const deepbsde::FbsdeProblem prob = deepbsde::make_cir_bond_1d(cir, T, x0);
  const deepbsde::NetParams cp = deepbsde::init_params(seed, 1, 1, 1);
  deepbsde::GradCheck cchk;
  bool found_batch = false;
  for (std::uint64_t off = 0; off < 16 && !found_batch; ++off) {
    const deepbsde::PathBatch batch = deepbsde::generate(seed + off, 1, 8, 20, 1, T);
    deepbsde::RolloutTape tape;
    deepbsde::simulate(prob, cp, batch, tape);
    if (deepbsde::tape_min_x(tape) <= 0.05) continue;
    found_batch = true;
    cchk = deepbsde::check_gradients(prob, cp, batch, 100, 1e-5, 1e-3, seed + 18);
  }
  if (!found_batch) {
    std::printf("[FAIL] no batch found away from the truncation kink\n");
    return kExitNumerical;
  }
  std::printf("1-d CIR         : max rel error %.3e over %d coordinates (threshold 1e-3)\n",
              cchk.max_rel_error, cchk.coords_checked);

  const bool pass = schk.pass && cchk.pass;
  std::printf("%s reverse-mode gradients vs central finite differences\n",
              pass ? "[PASS]" : "[FAIL]");
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep BSDE solver for CIR-type coupled FBSDEs"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::uint64_t seed_val = 0;
  std::string out_val;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run configuration file")->required();
    sub->add_option("--seed", seed_val, "override train.seed");
    sub->add_option("--out", out_val, "override output.dir");
  };

  CLI::App* run = app.add_subcommand("run", "train and emit trace/summary CSVs");
  CLI::App* val = app.add_subcommand("validate-analytic",
                                     "compare the closed-form bond price with the Monte Carlo oracle");
  CLI::App* grd = app.add_subcommand("grad-check",
                                     "compare reverse-mode gradients with central finite differences");
  add_common(run);
  add_common(val);
  add_common(grd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  for (CLI::App* sub : {run, val, grd}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed") > 0) ov.seed = seed_val;
    if (sub->count("--out") > 0) ov.out_dir = out_val;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, ov);
    if (val->parsed()) return cmd_validate_analytic(config_path, ov);
    if (grd->parsed()) return cmd_grad_check(config_path, ov);
    return kExitConfig;
  } catch (const deepbsde::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const deepbsde::TrainingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::ios_base::failure& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
}
