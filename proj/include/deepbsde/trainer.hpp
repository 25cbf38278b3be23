#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepbsde/fbsde.hpp"
#include "deepbsde/network.hpp"
#include "deepbsde/paths.hpp"
#include "deepbsde/rollout.hpp"

namespace deepbsde {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ReferenceMode {
  Auto,      // analytic when the problem has one, otherwise self-mean
  Analytic,  // decoupling field at (0, x0); error if absent
  SelfMean,  // cross-run mean of the final Y0 iterates
  None,
};

struct TrainConfig {
  long M = 1000;          // sample paths per iteration
  int N = 100;            // time steps
  long iterations = 3000;
  int repeats = 10;
  std::uint64_t seed = 0;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long record_every = 1;
  std::vector<long> checkpoints{500, 1000, 2000, 3000};
  ReferenceMode reference = ReferenceMode::Auto;

  void validate() const {
    if (M < 1 || N < 1 || repeats < 1 || record_every < 1 || iterations < 0)
      throw std::invalid_argument("TrainConfig: counts must be >= 1 (iterations >= 0)");
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0))
      throw std::invalid_argument("TrainConfig: bad Adam hyperparameters");
  }
};

// One recorded training step: the batch loss seen at that iteration
// (evaluated before the update) and Y0 = alpha after the update.
struct IterRecord {
  long iteration = 0;
  double loss = 0.0;
  double y0 = 0.0;
};

struct RunSeries {
  std::uint64_t seed = 0;
  std::vector<IterRecord> records;
  double final_loss = 0.0;
  double final_y0 = 0.0;
  bool ok = true;
  std::string fail_reason;
  NetParams final_params;

  const IterRecord* record_at(long iteration) const {
    for (const IterRecord& r : records)
      if (r.iteration == iteration) return &r;
    return nullptr;
  }
};

struct CheckpointRow {
  long step = 0;
  double mean_y0 = 0.0;
  double std_y0 = 0.0;
  double mean_loss = 0.0;
  double std_loss = 0.0;
};

struct RunStats {
  std::vector<RunSeries> runs;
  std::vector<CheckpointRow> summary;
  std::optional<double> reference;  // resolved Y0* if any
  std::string reference_kind;       // "analytic", "self" or "none"
  int failed_runs = 0;
};

// Posterior error bound of the trained solution, up to the unknown
// constant: sqrt(loss + 1/ln N). Reported as a diagnostic next to the
// true error whenever an analytic solution exists.
inline double posterior_bound(double loss, double N) {
  if (loss < 0.0) throw std::domain_error("posterior_bound: loss must be >= 0");
  if (!(N >= 2.0)) throw std::domain_error("posterior_bound: N must be >= 2");
  return std::sqrt(loss + 1.0 / std::log(N));
}

namespace detail {

inline bool record_due(long s, long iterations, const TrainConfig& cfg) {
  if (s == iterations) return true;
  if (s % cfg.record_every == 0) return true;
  return std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), s) != cfg.checkpoints.end();
}

// Checkpoints that actually exist for this iteration budget; falls back
// to the final iteration when none of the configured ones fit.
inline std::vector<long> effective_checkpoints(const TrainConfig& cfg) {
  std::vector<long> out;
  for (long c : cfg.checkpoints)
    if (c >= 1 && c <= cfg.iterations) out.push_back(c);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) out.push_back(cfg.iterations);
  return out;
}

}  // namespace detail

// One run of the training loop: at every iteration a fresh increment
// batch (the iteration index is the generator stream), one rollout, one
// reverse pass, one Adam update. A non-finite state, loss, gradient or
// parameter aborts the iteration; the first such event restores the
// pre-iteration snapshot, halves the learning rate for the rest of the
// run and retries the iteration once. A second event fails the run.
inline RunSeries train_single(const FbsdeProblem& problem, const TrainConfig& cfg,
                              std::uint64_t run_seed) {
  problem.validate();
  cfg.validate();

  RunSeries series;
  series.seed = run_seed;
  NetParams params = init_params(run_seed, problem.n, problem.m, problem.d);
  AdamState adam = AdamState::make(params.shape, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  RolloutTape tape;

  if (cfg.iterations == 0) {
    const PathBatch batch = generate(run_seed, 1, cfg.M, cfg.N, problem.d, problem.T);
    const LossReport rep = simulate(problem, params, batch, tape);
    series.records.push_back({0, rep.loss, params.alpha()[0]});
    series.final_loss = rep.loss;
    series.final_y0 = params.alpha()[0];
    series.final_params = params;
    return series;
  }

  bool retried = false;
  long s = 1;
  while (s <= cfg.iterations) {
    const PathBatch batch =
        generate(run_seed, static_cast<std::uint64_t>(s), cfg.M, cfg.N, problem.d, problem.T);
    const std::vector<double> snap_params = params.data;
    const AdamState snap_adam = adam;

    std::string fail;
    double loss = 0.0;
    const LossReport rep = simulate(problem, params, batch, tape);
    if (rep.diverged) {
      fail = "non-finite state at iteration " + std::to_string(s) + ", path " +
             std::to_string(rep.fail_path) + ", step " + std::to_string(rep.fail_step);
    } else {
      loss = rep.loss;
      const GradReport grads = backward(problem, params, tape);
      if (!grads.ok) {
        fail = "non-finite adjoint at iteration " + std::to_string(s) + ", path " +
               std::to_string(grads.fail_path) + ", step " + std::to_string(grads.fail_step);
      } else if (!adam_step(params, adam, CSpan{grads.grad})) {
        fail = "non-finite parameter after update at iteration " + std::to_string(s);
      }
    }

    if (!fail.empty()) {
      if (!retried) {
        retried = true;
        params.data = snap_params;
        adam = snap_adam;
        adam.lr = snap_adam.lr * 0.5;
        continue;  // retry the same iteration at half the learning rate
      }
      series.ok = false;
      series.fail_reason = fail;
      return series;
    }

    if (detail::record_due(s, cfg.iterations, cfg)) {
      series.records.push_back({s, loss, params.alpha()[0]});
    }
    series.final_loss = loss;
    series.final_y0 = params.alpha()[0];
    ++s;
  }
  series.final_params = params;
  return series;
}

namespace detail {

inline void aggregate(RunStats& stats, const FbsdeProblem& problem, const TrainConfig& cfg) {
  std::vector<const RunSeries*> good;
  for (const RunSeries& r : stats.runs)
    if (r.ok) good.push_back(&r);
  stats.failed_runs = static_cast<int>(stats.runs.size() - good.size());
  if (2 * good.size() < stats.runs.size())
    throw TrainingError("train_repeated: " + std::to_string(stats.failed_runs) + " of " +
                        std::to_string(stats.runs.size()) + " runs diverged");

  for (long step : effective_checkpoints(cfg)) {
    CheckpointRow row;
    row.step = step;
    double sy = 0.0, sl = 0.0;
    for (const RunSeries* r : good) {
      const IterRecord* rec = r->record_at(step);
      if (rec == nullptr) throw TrainingError("missing record at checkpoint");
      sy += rec->y0;
      sl += rec->loss;
    }
    const double cnt = static_cast<double>(good.size());
    row.mean_y0 = sy / cnt;
    row.mean_loss = sl / cnt;
    double vy = 0.0, vl = 0.0;
    for (const RunSeries* r : good) {
      const IterRecord* rec = r->record_at(step);
      vy += (rec->y0 - row.mean_y0) * (rec->y0 - row.mean_y0);
      vl += (rec->loss - row.mean_loss) * (rec->loss - row.mean_loss);
    }
    row.std_y0 = std::sqrt(vy / cnt);  // population std over runs
    row.std_loss = std::sqrt(vl / cnt);
    stats.summary.push_back(row);
  }

  switch (cfg.reference) {
    case ReferenceMode::None:
      stats.reference_kind = "none";
      break;
    case ReferenceMode::Analytic:
      if (!problem.has_analytic())
        throw std::invalid_argument("reference=analytic but the problem has no analytic solution");
      stats.reference = problem.analytic_at_start()[0];
      stats.reference_kind = "analytic";
      break;
    case ReferenceMode::SelfMean:
    case ReferenceMode::Auto: {
      if (cfg.reference == ReferenceMode::Auto && problem.has_analytic()) {
        stats.reference = problem.analytic_at_start()[0];
        stats.reference_kind = "analytic";
      } else {
        double s = 0.0;
        for (const RunSeries* r : good) s += r->final_y0;
        stats.reference = s / static_cast<double>(good.size());
        stats.reference_kind = "self";
      }
      break;
    }
  }
}

}  // namespace detail

// Single run packaged with its (degenerate) aggregate table.
inline RunStats train(const FbsdeProblem& problem, const TrainConfig& cfg) {
  RunStats stats;
  stats.runs.push_back(train_single(problem, cfg, cfg.seed));
  detail::aggregate(stats, problem, cfg);
  return stats;
}

// `repeats` independent runs with derived seeds seed+r, aggregated at the
// configured checkpoints. Failed runs are excluded from the aggregates;
// more than half failing is an error. on_run, when given, is invoked
// after each run completes (progress reporting for long jobs).
inline RunStats train_repeated(
    const FbsdeProblem& problem, const TrainConfig& cfg,
    const std::function<void(int, const RunSeries&)>& on_run = {}) {
  RunStats stats;
  for (int r = 0; r < cfg.repeats; ++r) {
    stats.runs.push_back(train_single(problem, cfg, cfg.seed + static_cast<std::uint64_t>(r)));
    if (on_run) on_run(r, stats.runs.back());
  }
  detail::aggregate(stats, problem, cfg);
  return stats;
}

// Empirical check of the posterior-bound form: per run, fit
//   kappa = |Y0 - Y0*| / sqrt(loss + 1/ln N)
// at the first checkpoint, then require the bound with that kappa to hold
// at every later checkpoint. Returns one flag per successful run.
inline std::vector<bool> posterior_check(const RunStats& stats, double reference, double N,
                                         const std::vector<long>& checkpoints) {
  std::vector<bool> ok;
  for (const RunSeries& run : stats.runs) {
    if (!run.ok) continue;
    bool holds = true;
    double kappa = 0.0;
    bool first = true;
    for (long step : checkpoints) {
      const IterRecord* rec = run.record_at(step);
      if (rec == nullptr) continue;
      const double bound = posterior_bound(std::max(0.0, rec->loss), N);
      const double err = std::abs(rec->y0 - reference);
      if (first) {
        kappa = err / bound;
        first = false;
      } else if (err > kappa * bound) {
        holds = false;
      }
    }
    ok.push_back(holds);
  }
  return ok;
}

namespace csv {

inline void print_number(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  os << buf;
}

}  // namespace csv

// Per-iteration trace: iteration, loss, y0, rel_error, posterior_bound.
// The rel_error cell is empty when no reference value exists.
inline void write_trace_csv(std::ostream& os, const RunSeries& series,
                            std::optional<double> reference, double N) {
  os << "iteration,loss,y0,rel_error,posterior_bound\n";
  for (const IterRecord& r : series.records) {
    os << r.iteration << ',';
    csv::print_number(os, r.loss);
    os << ',';
    csv::print_number(os, r.y0);
    os << ',';
    if (reference && *reference != 0.0)
      csv::print_number(os, std::abs(r.y0 - *reference) / std::abs(*reference));
    os << ',';
    csv::print_number(os, posterior_bound(std::max(0.0, r.loss), N));
    os << '\n';
  }
}

// Aggregate table shaped like the checkpoint summaries: step, mean_y0,
// std_y0, mean_loss, std_loss.
inline void write_summary_csv(std::ostream& os, const RunStats& stats) {
  os << "step,mean_y0,std_y0,mean_loss,std_loss\n";
  for (const CheckpointRow& row : stats.summary) {
    os << row.step << ',';
    csv::print_number(os, row.mean_y0);
    os << ',';
    csv::print_number(os, row.std_y0);
    os << ',';
    csv::print_number(os, row.mean_loss);
    os << ',';
    csv::print_number(os, row.std_loss);
    os << '\n';
  }
}

}  // namespace deepbsde
