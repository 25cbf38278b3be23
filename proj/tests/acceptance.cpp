// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one pass/fail line per criterion. Criteria 1-3 reproduce the
// benchmark training experiments end to end, so a full pass takes a
// couple of hours on one core; set DEEPBSDE_ACCEPT_FULL=1 to also run the
// extended n=100 experiment.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "deepbsde/config.hpp"
#include "deepbsde/models.hpp"
#include "deepbsde/oracle.hpp"
#include "deepbsde/paths.hpp"
#include "deepbsde/rollout.hpp"
#include "deepbsde/trainer.hpp"

namespace fs = std::filesystem;
using namespace deepbsde;

namespace {

struct Criterion {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Criterion> g_results;

void record(int id, bool pass, const std::string& detail) {
  g_results.push_back({id, pass, detail});
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return std::string(buf);
}

const CheckpointRow* row_at(const RunStats& stats, long step) {
  for (const CheckpointRow& r : stats.summary)
    if (r.step == step) return &r;
  return nullptr;
}

void progress(const char* tag, int run, const RunSeries& series) {
  if (series.ok)
    std::printf("  %s run %d done: final loss %.3e, final y0 %.5f\n", tag, run,
                series.final_loss, series.final_y0);
  else
    std::printf("  %s run %d FAILED: %s\n", tag, run, series.fail_reason.c_str());
  std::fflush(stdout);
}

// ---- criteria 1, 2, 6: the 1-d CIR benchmark ------------------------------

void criteria_example1() {
  const double analytic = 0.39647;
  std::printf("running 1-d CIR benchmark (10 runs x 3000 iterations)...\n");
  const FbsdeProblem prob = make_cir_bond_1d(CirParams{{1.0}, {1.0}, {1.0}}, 1.0, 1.0);
  TrainConfig cfg;  // defaults are the benchmark setup
  cfg.record_every = 10;
  const RunStats stats =
      train_repeated(prob, cfg, [](int r, const RunSeries& s) { progress("cir1d", r, s); });

  const CheckpointRow* last = row_at(stats, 3000);
  if (last == nullptr) {
    record(1, false, "no checkpoint row at step 3000");
    record(2, false, "no checkpoint rows");
    record(6, false, "no checkpoint rows");
    return;
  }
  const double mean_err = std::abs(last->mean_y0 - analytic);
  const bool c1 = mean_err <= 3e-3 && last->std_y0 <= 5e-3 && last->mean_loss <= 2e-3 &&
                  stats.failed_runs == 0;
  record(1, c1,
         fmt("1-d CIR: |mean_y0 - 0.39647| = %.2e (<= 3e-3), std_y0 = %.2e (<= 5e-3), "
             "mean_loss = %.2e (<= 2e-3)",
             mean_err, last->std_y0, last->mean_loss));

  // loss trajectory over the checkpoints: non-increasing, tolerating one
  // inversion within one cross-run std
  int inversions = 0;
  bool magnitude_ok = true;
  std::string traj;
  for (std::size_t k = 0; k < stats.summary.size(); ++k) {
    traj += fmt("%s%.3e", k ? " -> " : "", stats.summary[k].mean_loss);
    if (k == 0) continue;
    const double rise = stats.summary[k].mean_loss - stats.summary[k - 1].mean_loss;
    if (rise > 0.0) {
      ++inversions;
      if (rise > stats.summary[k].std_loss) magnitude_ok = false;
    }
  }
  const bool c2 = inversions <= 1 && magnitude_ok;
  record(2, c2, fmt("loss trajectory %s (%d inversion(s))", traj.c_str(), inversions));

  // posterior-bound form with kappa fitted at checkpoint 500
  const std::vector<bool> holds = posterior_check(stats, analytic, 100.0, {500, 1000, 2000, 3000});
  int held = 0;
  for (bool h : holds) held += h ? 1 : 0;
  const bool c6 = held >= 9 && holds.size() == 10;
  record(6, c6, fmt("posterior bound holds in %d of %zu runs (need >= 9 of 10)", held,
                    holds.size()));
}

// ---- criterion 3: multi-dimensional CIR -----------------------------------

void criterion_multi() {
  std::printf("running multi-dim CIR benchmark (n=10, 10 runs x 3000 iterations)...\n");
  const int n = 10;
  const CirParams params = sample_cir_params(0, n);
  const FbsdeProblem prob =
      make_cir_bond_multi(params, n, 1, 1.0, std::vector<double>(n, 1.0));
  TrainConfig cfg;
  cfg.record_every = 10;
  const RunStats stats =
      train_repeated(prob, cfg, [](int r, const RunSeries& s) { progress("cir_multi", r, s); });

  const CheckpointRow* last = row_at(stats, 3000);
  const bool c3 = last != nullptr && last->mean_loss <= 2e-3 && last->std_y0 <= 5e-3 &&
                  stats.failed_runs == 0;
  record(3, c3,
         last ? fmt("n=10 CIR: mean_loss = %.2e (<= 2e-3), std_y0 = %.2e (<= 5e-3), "
                    "self-limit y0 = %.5f",
                    last->mean_loss, last->std_y0, *stats.reference)
              : std::string("no checkpoint row at step 3000"));

  if (const char* full = std::getenv("DEEPBSDE_ACCEPT_FULL"); full && full[0] == '1') {
    std::printf("running extended n=100 experiment (DEEPBSDE_ACCEPT_FULL=1)...\n");
    const int big = 100;
    const CirParams p100 = sample_cir_params(0, big);
    const FbsdeProblem prob100 =
        make_cir_bond_multi(p100, big, 1, 1.0, std::vector<double>(big, 1.0));
    const RunStats s100 = train_repeated(prob100, cfg, [](int r, const RunSeries& s) {
      progress("cir_multi100", r, s);
    });
    const CheckpointRow* l100 = row_at(s100, 3000);
    const bool ok = l100 != nullptr && l100->mean_loss <= 4e-3 && l100->std_y0 <= 1e-2;
    std::printf("[%s] extended n=100: mean_loss = %.2e (<= 4e-3), std_y0 = %.2e (<= 1e-2)\n",
                ok ? "PASS" : "FAIL", l100 ? l100->mean_loss : 0.0, l100 ? l100->std_y0 : 0.0);
    if (!ok) g_results.push_back({3, false, "extended n=100 experiment failed"});
  } else {
    std::printf("extended n=100 experiment skipped (set DEEPBSDE_ACCEPT_FULL=1 to run)\n");
  }
}

// ---- criterion 4: analytic vs Monte Carlo oracle ---------------------------

void criterion_oracle() {
  struct Case {
    CirParams params;
    double T, x0;
  };
  const std::vector<Case> cases = {
      {CirParams{{1.0}, {1.0}, {1.0}}, 1.0, 1.0},
      {CirParams{{2.0}, {0.5}, {0.3}}, 1.0, 1.0},
      {CirParams{{0.5}, {0.8}, {0.7}}, 2.0, 2.0},
  };
  bool all = true;
  std::string detail = "analytic vs MC (1e5 paths, N=1000):";
  for (const Case& c : cases) {
    const AnalyticCheck chk = check_analytic_vs_mc(c.params, c.T, c.x0, 100000, 1000, 0);
    all = all && chk.pass;
    detail += fmt(" {a=%.2g: %.2f se}", c.params.a[0], chk.sigmas);
  }
  record(4, all, detail + " (all <= 3 se)");
}

// ---- criterion 5: gradient correctness -------------------------------------

void criterion_gradients() {
  const FbsdeProblem smooth = make_smooth_surrogate(2, 2, 2, 1.0, 1.0, 0.4);
  const NetParams sp = init_params(11, smooth.n, smooth.m, smooth.d);
  const PathBatch sbatch = generate(12, 1, 8, 20, smooth.d, smooth.T);
  const GradCheck schk = check_gradients(smooth, sp, sbatch, 100, 1e-5, 1e-4, 99);

  const FbsdeProblem cir = make_cir_bond_1d(CirParams{{1.0}, {1.0}, {1.0}}, 1.0, 1.0);
  const NetParams cp = init_params(13, 1, 1, 1);
  GradCheck cchk;
  bool found = false;
  for (std::uint64_t off = 0; off < 16 && !found; ++off) {
    const PathBatch batch = generate(14 + off, 1, 8, 20, 1, 1.0);
    RolloutTape tape;
    simulate(cir, cp, batch, tape);
    if (tape_min_x(tape) <= 0.05) continue;
    found = true;
    cchk = check_gradients(cir, cp, batch, 100, 1e-5, 1e-3, 98);
  }
  const bool pass = schk.pass && found && cchk.pass;
  record(5, pass,
         fmt("gradients vs finite differences: smooth %.2e (<= 1e-4), CIR %.2e (<= 1e-3)",
             schk.max_rel_error, cchk.max_rel_error));
}

// ---- criterion 7: byte-identical CSV output --------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void criterion_determinism() {
  const fs::path base = fs::temp_directory_path() / "deepbsde_accept7";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path cfg_path = base / "det.cfg";
  {
    std::ofstream os(cfg_path);
    os << "problem.kind = cir1d\n"
          "train.M = 200\ntrain.N = 20\ntrain.iterations = 50\ntrain.repeats = 2\n"
          "train.checkpoints = 25,50\ntrain.record_every = 1\n";
  }
  auto invoke = [&](const std::string& out_dir, const std::string& threads) {
    const std::string cmd = "OMP_NUM_THREADS=" + threads + " \"" DEEPBSDE_CLI_PATH "\" run " +
                            cfg_path.string() + " --out " + (base / out_dir).string() +
                            " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
  };
  const bool ok1 = invoke("o1", "1");
  const bool ok2 = invoke("o2", "3");
  bool same = ok1 && ok2;
  for (const char* name : {"summary.csv", "trace_run0.csv", "trace_run1.csv"})
    same = same && !slurp(base / "o1" / name).empty() &&
           slurp(base / "o1" / name) == slurp(base / "o2" / name);
  record(7, same, "two cmd_run invocations (1 vs 3 workers) produce byte-identical CSVs");
}

// ---- criterion 8: property roundup ------------------------------------------

void criterion_properties() {
  bool ok = true;
  std::string detail;

  // frozen-dynamics closed forms under zero increments (one path, so the
  // values are exact with no summation rounding)
  {
    const double c = 0.75, alpha = 0.3;
    const FbsdeProblem prob = make_frozen_test(1, 1, 1, 1.0, {1.0}, c);
    NetParams params;
    params.shape = NetShape{1, 1, 1};
    params.data.assign(params.shape.size(), 0.0);
    params.alpha()[0] = alpha;
    PathBatch zb;
    zb.M = 1;
    zb.N = 10;
    zb.d = 1;
    zb.dt = 0.1;
    zb.increments.assign(10, 0.0);
    RolloutTape tape;
    const LossReport rep = simulate(prob, params, zb, tape);
    const GradReport grads = backward(prob, params, tape);
    const double e = c - alpha;
    bool frozen_ok = rep.loss == e * e && grads.grad[0] == 2.0 * (alpha - c);
    for (std::size_t i = 1; i < grads.grad.size(); ++i) frozen_ok = frozen_ok && grads.grad[i] == 0.0;
    ok = ok && frozen_ok;
    detail += fmt("frozen closed forms %s", frozen_ok ? "ok" : "BROKEN");
  }

  // truncation idempotence of the CIR diffusion
  {
    const FbsdeProblem prob = make_cir_bond_1d(CirParams{{1.0}, {1.0}, {1.0}}, 1.0, 1.0);
    bool trunc_ok = true;
    for (int i = 0; i < 100; ++i) {
      const double x = -3.0 + 6.0 * rng::uniform(5, 3, static_cast<std::uint64_t>(i));
      double a = 0.0, b = 0.0;
      prob.sigma_row(0, 0.2, x, Span{&a, 1});
      prob.sigma_row(0, 0.2, x > 0.0 ? x : 0.0, Span{&b, 1});
      trunc_ok = trunc_ok && a == b && std::isfinite(a);
    }
    ok = ok && trunc_ok;
    detail += fmt(", truncation idempotent %s", trunc_ok ? "ok" : "BROKEN");
  }

  // path generator moments: 10^6 draws at T=1, N=100
  {
    const PathBatch batch = generate(0, 1, 10000, 100, 1, 1.0);
    double sum = 0.0, sq = 0.0;
    for (double v : batch.increments) {
      sum += v;
      sq += v * v;
    }
    const double count = static_cast<double>(batch.increments.size());
    const double mean = sum / count;
    const double var = sq / count - mean * mean;
    const bool mom_ok = std::abs(mean) <= 4.0 * std::sqrt(batch.dt / count) &&
                        std::abs(var - batch.dt) <= 0.01 * batch.dt;
    ok = ok && mom_ok;
    detail += fmt(", path moments %s", mom_ok ? "ok" : "BROKEN");
  }

  // Adam fixed point on zero gradients
  {
    NetParams p = init_params(2, 1, 1, 1);
    const std::vector<double> before = p.data;
    AdamState st = AdamState::make(p.shape, 5e-3, 0.9, 0.999, 1e-8);
    const std::vector<double> zeros(p.data.size(), 0.0);
    const bool adam_ok = adam_step(p, st, CSpan{zeros}) && p.data == before && st.step == 1;
    ok = ok && adam_ok;
    detail += fmt(", Adam fixed point %s", adam_ok ? "ok" : "BROKEN");
  }

  record(8, ok, detail);
}

}  // namespace

int main() {
  std::printf("deepbsde acceptance suite\n");
  std::printf("fast criteria first, then the training benchmarks (1-2 h on one core)\n\n");

  criterion_oracle();       // 4
  criterion_gradients();    // 5
  criterion_determinism();  // 7
  criterion_properties();   // 8
  criteria_example1();      // 1, 2, 6
  criterion_multi();        // 3

  std::printf("\nsummary:\n");
  bool all = true;
  for (int id = 1; id <= 8; ++id) {
    for (const Criterion& c : g_results) {
      if (c.id != id) continue;
      std::printf("  criterion %d: %s\n", id, c.pass ? "PASS" : "FAIL");
      all = all && c.pass;
    }
  }
  std::printf("%s\n", all ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return all ? 0 : 1;
}
