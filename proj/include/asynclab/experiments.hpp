#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "asynclab/delay.hpp"
#include "asynclab/dynamics.hpp"
#include "asynclab/error.hpp"
#include "asynclab/parallel.hpp"
#include "asynclab/random.hpp"
#include "asynclab/run_config.hpp"
#include "asynclab/spectral_model.hpp"
#include "asynclab/theory.hpp"

namespace asynclab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Binomial proportion with a Wilson score interval.
struct Proportion {
  std::int64_t successes = 0;
  std::int64_t trials = 0;
  double estimate = kNaN;
  double lower = kNaN;
  double upper = kNaN;
};

/// 95% Wilson interval by default.
inline Proportion wilson_interval(std::int64_t successes, std::int64_t trials, double z = normal_quantile(0.975)) {
  Proportion p;
  p.successes = successes;
  p.trials = trials;
  if (trials <= 0) return p;
  const double n = static_cast<double>(trials);
  const double phat = successes / n;
  const double z2 = z * z;
  const double centre = (phat + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z / (1 + z2 / n) * std::sqrt(phat * (1 - phat) / n + z2 / (4 * n * n));
  p.estimate = phat;
  p.lower = std::max(0.0, centre - half);
  p.upper = std::min(1.0, centre + half);
  return p;
}

/// Shared knobs for the Monte Carlo drivers.
struct ExecutionOptions {
  int threads = 0;  // 0 → default_threads()
  const std::atomic<bool>* cancel = nullptr;
  /// Called with (tasks done, tasks total); serialized, may come from any worker.
  std::function<void(std::int64_t, std::int64_t)> progress;

  int resolved_threads() const { return threads > 0 ? threads : default_threads(); }
};

/// Seed of replica r. It does not depend on the cell, so every cell of a
/// sweep sees the same data streams (common random numbers).
inline std::uint64_t replica_seed(std::uint64_t base, std::int64_t replica) {
  return split_seed(base, static_cast<std::uint64_t>(replica));
}

namespace detail {

template <class Fn>
std::int64_t run_tasks(std::int64_t n, const ExecutionOptions& opts, Fn&& fn) {
  std::mutex progress_mutex;
  std::int64_t finished = 0;
  return parallel_for(
      n, opts.resolved_threads(),
      [&](std::int64_t i) {
        fn(i);
        if (opts.progress) {
          std::lock_guard lock(progress_mutex);
          opts.progress(++finished, n);
        }
      },
      opts.cancel);
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? kNaN : s / static_cast<double>(xs.size());
}

inline double sample_sd(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return kNaN;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Momentum × delay sweep

enum class SuccessMetric {
  kFinalErrorMean,      // per-replica value 1 − a_K
  kAlignmentThreshold,  // per-replica value 1 if a_K < threshold (a failure), else 0
};

struct SweepGrid {
  std::vector<double> mus;
  std::vector<DelayModel> delays;
  int replicas = 100;
  RunConfig base;
  SuccessMetric metric = SuccessMetric::kFinalErrorMean;
  double alignment_threshold = 0.99;
  /// Optimal-delay tolerance: error ≤ (1+ρ)·(τ=0 error).
  double rho = 1.0;

  static std::vector<DelayModel> fixed_delays(std::span<const int> taus) {
    std::vector<DelayModel> out;
    for (int t : taus) out.push_back(DelayModel::fixed(t));
    return out;
  }

  void validate() const {
    if (mus.empty() || delays.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep grid is empty");
    if (replicas < 2) throw Error(ErrorCode::kInvalidArgument, "replicas must be >= 2");
    if (!(rho >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "rho must be >= 0");
    for (double mu : mus) {
      RunConfig c = base;
      c.mu = mu;
      c.validate();
    }
  }
};

/// Outcome of one (μ, delay) cell.
struct SweepCell {
  double mu = 0.0;
  DelayModel delay;
  double tau = 0.0;  // nominal delay (mean of the delay model)
  int replicas = 0;
  bool completed = false;
  std::vector<double> values;  // per-replica metric, replica order
  double mean_err = kNaN;
  double std_err = kNaN;  // sample standard deviation across replicas
  double ci_half = kNaN;  // 95% normal half-width of the mean
  int diverged = 0;

  // Bounded-increment checks across every step of every replica.
  double gamma = kNaN;  // norm-bound exponent; ≤ 0 means outside the regime
  double norm_bound = kNaN;
  double max_norm_sq = 0.0;
  int norm_violations = 0;
  double max_jump_ratio = 0.0;  // max ‖v_{k+1}−v_k‖ / (2C_dη/(1−μ))
  std::int64_t jump_violations = 0;
};

struct TradeoffCurve {
  std::vector<double> mus;
  std::vector<double> taus;
  std::vector<SweepCell> cells;  // row-major: mus × delays
  double rho = 1.0;
  std::vector<std::optional<double>> optimal;  // τ̂ per μ
  bool cancelled = false;

  const SweepCell& cell(std::size_t mu_index, std::size_t tau_index) const {
    return cells[mu_index * taus.size() + tau_index];
  }
};

/// τ̂(μ): largest nominal τ among completed cells whose mean error is at most
/// (1+ρ) times the same-μ τ=0 error. Empty when the baseline is missing.
inline std::vector<std::optional<double>> optimal_delays(const TradeoffCurve& curve, double rho) {
  std::vector<std::optional<double>> out(curve.mus.size());
  for (std::size_t m = 0; m < curve.mus.size(); ++m) {
    std::optional<double> baseline;
    for (std::size_t t = 0; t < curve.taus.size(); ++t) {
      const auto& c = curve.cell(m, t);
      if (c.completed && c.tau == 0.0) baseline = c.mean_err;
    }
    if (!baseline) continue;
    for (std::size_t t = 0; t < curve.taus.size(); ++t) {
      const auto& c = curve.cell(m, t);
      if (!c.completed || !(c.mean_err <= (1.0 + rho) * *baseline)) continue;
      if (!out[m] || c.tau > *out[m]) out[m] = c.tau;
    }
  }
  return out;
}

/// Runs every replica of every cell. Results do not depend on the thread
/// count or on the order in which tasks happen to finish; a cancelled sweep
/// keeps its fully completed cells.
inline TradeoffCurve run_sweep(const SweepGrid& grid, const SpectralModel& model,
                               const ExecutionOptions& opts = {}) {
  grid.validate();
  const std::size_t nm = grid.mus.size();
  const std::size_t nt = grid.delays.size();
  const std::int64_t reps = grid.replicas;

  struct ReplicaResult {
    double value = kNaN;
    bool diverged = false;
    double max_norm_sq = 0.0;
    double jump_ratio = 0.0;
    std::int64_t jump_violations = 0;
  };
  std::vector<ReplicaResult> results(nm * nt * reps);
  std::vector<std::atomic<bool>> done(results.size());

  const std::int64_t total = static_cast<std::int64_t>(results.size());
  detail::run_tasks(total, opts, [&](std::int64_t task) {
    const std::size_t cell = static_cast<std::size_t>(task / reps);
    const std::int64_t r = task % reps;
    RunConfig config = grid.base;
    config.mu = grid.mus[cell / nt];
    config.delay = grid.delays[cell % nt];
    config.seed = replica_seed(grid.base.seed, r);
    config.stride = std::max<std::int64_t>(config.horizon, 1);
    const Trajectory traj = run_trajectory(model, config);

    ReplicaResult& out = results[task];
    out.diverged = traj.diverged;
    if (grid.metric == SuccessMetric::kFinalErrorMean) {
      out.value = traj.final_error();
    } else {
      out.value = traj.diverged || traj.final_alignment() < grid.alignment_threshold ? 1.0 : 0.0;
    }
    out.max_norm_sq = traj.max_norm_sq;
    out.jump_ratio = traj.jump_bound > 0.0 ? traj.max_jump / traj.jump_bound : 0.0;
    out.jump_violations = traj.jump_violations;
    done[task] = true;
  });

  TradeoffCurve curve;
  curve.mus = grid.mus;
  curve.rho = grid.rho;
  for (const auto& d : grid.delays) curve.taus.push_back(d.mean());
  curve.cancelled = opts.cancel && opts.cancel->load();
  const double eta = grid.base.eta;
  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t t = 0; t < nt; ++t) {
      SweepCell c;
      c.mu = grid.mus[m];
      c.delay = grid.delays[t];
      c.tau = c.delay.mean();
      const std::size_t first = (m * nt + t) * reps;
      c.completed = true;
      for (std::int64_t r = 0; r < reps; ++r) c.completed = c.completed && done[first + r].load();
      if (c.completed) {
        c.replicas = grid.replicas;
        c.gamma = eta > 0.0 ? norm_bound_exponent(c.mu, eta, c.delay.capacity()) : kNaN;
        c.norm_bound = c.gamma > 0.0 ? 1.0 + 10.0 * std::pow(eta, c.gamma) : kNaN;
        for (std::int64_t r = 0; r < reps; ++r) {
          const auto& res = results[first + r];
          c.values.push_back(res.value);
          c.diverged += res.diverged;
          c.max_norm_sq = std::max(c.max_norm_sq, res.max_norm_sq);
          c.norm_violations += res.max_norm_sq > c.norm_bound;
          c.max_jump_ratio = std::max(c.max_jump_ratio, res.jump_ratio);
          c.jump_violations += res.jump_violations;
        }
        c.mean_err = detail::mean_of(c.values);
        c.std_err = detail::sample_sd(c.values, c.mean_err);
        c.ci_half = normal_quantile(0.975) * c.std_err / std::sqrt(static_cast<double>(reps));
      }
      curve.cells.push_back(std::move(c));
    }
  }
  curve.optimal = optimal_delays(curve, grid.rho);
  return curve;
}

// ---------------------------------------------------------------------------
// Phase detection

/// Empirical phase durations in time units (steps·η). t2 and t3 are measured
/// from the end of the previous phase; nullopt means the phase was not
/// reached within the horizon.
struct PhaseTimes {
  std::optional<double> t1, t2, t3;
  std::optional<std::int64_t> k1, k2, k3;  // step at which each phase ended
};

/// Streaming threshold-crossing detector. Feed rotated iterates in step order.
/// Phase I ends when (h_saddle)² < 1−δ², phase II when (h_1)² ≥ 1−δ², and
/// phase III at the start of the first window of `window` steps over which
/// Σ_{i≥2} h_i² ≤ ε holds throughout.
class PhaseDetector {
 public:
  PhaseDetector(double delta, double eps, std::int64_t window, int saddle = 1)
      : exit_level_(1.0 - delta * delta), eps_(eps), window_(window), saddle_(saddle) {
    if (window < 0) throw Error(ErrorCode::kInvalidArgument, "window must be >= 0");
  }

  void feed(std::int64_t k, std::span<const double> h) {
    if (!k1_) {
      if (h[saddle_] * h[saddle_] < exit_level_) k1_ = k;
      else return;
    }
    if (!k2_) {
      if (h[0] * h[0] >= exit_level_) k2_ = k;
      else return;
    }
    if (k3_) return;
    double residual = 0.0;
    for (std::size_t i = 1; i < h.size(); ++i) residual += h[i] * h[i];
    if (residual <= eps_) {
      if (!candidate_) candidate_ = k;
      if (k - *candidate_ >= window_) k3_ = candidate_;
    } else {
      candidate_.reset();
    }
  }

  bool done() const { return k3_.has_value(); }

  PhaseTimes times(double eta) const {
    PhaseTimes t;
    t.k1 = k1_;
    t.k2 = k2_;
    t.k3 = k3_;
    if (k1_) t.t1 = *k1_ * eta;
    if (k2_) t.t2 = (*k2_ - *k1_) * eta;
    if (k3_) t.t3 = (*k3_ - *k2_) * eta;
    return t;
  }

 private:
  double exit_level_;
  double eps_;
  std::int64_t window_;
  int saddle_;
  std::optional<std::int64_t> k1_, k2_, k3_, candidate_;
};

/// Window of `time` units in steps.
inline std::int64_t window_steps(double time, double eta) {
  return static_cast<std::int64_t>(std::llround(time / eta));
}

/// Phase times along a recorded trajectory at its recording resolution.
inline PhaseTimes detect_phases(const Trajectory& traj, const PhaseParams& p, double window_time = 1.0,
                                int saddle = 1) {
  PhaseDetector det(p.delta, p.eps, window_steps(window_time, traj.config.eta), saddle);
  for (std::size_t r = 0; r < traj.size() && !det.done(); ++r) det.feed(traj.steps[r], traj.h(r));
  return det.times(traj.config.eta);
}

/// One replica run with step-resolution detection. It also records the
/// residual Σ_{i≥2}h_i² at the given checkpoint steps (NaN if not reached),
/// and stops once the detector is done and every checkpoint has passed.
struct PhaseRun {
  PhaseTimes times;
  std::vector<double> residual_at;
  std::int64_t steps_run = 0;
  bool diverged = false;
};

inline PhaseRun run_phases(const SpectralModel& model, RunConfig config, const PhaseParams& p,
                           double window_time = 1.0, std::span<const std::int64_t> checkpoints = {},
                           int saddle = 1) {
  const int d = model.dim();
  PhaseDetector det(p.delta, p.eps, window_steps(window_time, config.eta), saddle);
  PhaseRun out;
  out.residual_at.assign(checkpoints.size(), kNaN);
  std::int64_t last_checkpoint = 0;
  for (auto c : checkpoints) last_checkpoint = std::max(last_checkpoint, c);

  std::vector<double> h(d);
  auto visit = [&](std::int64_t k, std::span<const double> v) {
    model.rotate(v, h);
    det.feed(k, h);
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      if (checkpoints[c] != k) continue;
      double residual = 0.0;
      for (int i = 1; i < d; ++i) residual += h[i] * h[i];
      out.residual_at[c] = residual;
    }
    return !(det.done() && k >= last_checkpoint);
  };

  config.stride = std::max<std::int64_t>(config.horizon, 1);
  if (!visit(0, config.init)) {
    out.times = det.times(config.eta);
    return out;
  }
  const Trajectory traj = run_trajectory(model, config, [&](const StepView& s) { return visit(s.k + 1, s.next); });
  out.times = det.times(config.eta);
  out.steps_run = traj.steps_run;
  out.diverged = traj.diverged;
  return out;
}

struct PhaseReport {
  PhaseParams params;
  double window_time = 1.0;
  double T1_main = kNaN, T1_appx = kNaN, T2 = kNaN, T3_main = kNaN, T3_appx = kNaN;
  std::vector<PhaseRun> replicas;

  Proportion escape_main, escape_appx;  // t1 ≤ T1
  Proportion traverse;                  // t2 ≤ T2
  /// Σ_{i≥2}h_i² ≤ ε at the fixed time T1+T2+max(T3, 0); empty when T3 is
  /// infeasible for that variant.
  std::optional<Proportion> converge_main, converge_appx;
};

namespace detail {

template <class Fn>
double guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kStepTooLarge) return kNaN;
    throw;
  }
}

}  // namespace detail

/// Runs `replicas` runs of config (each with replica_seed) from the saddle and
/// compares the detected phase times with the predicted ones.
inline PhaseReport phase_report(const SpectralModel& model, const RunConfig& config, const PhaseParams& p,
                                int replicas, double window_time = 1.0, const ExecutionOptions& opts = {}) {
  if (replicas < 1) throw Error(ErrorCode::kInvalidArgument, "replicas must be >= 1");
  p.validate();
  PhaseReport rep;
  rep.params = p;
  rep.window_time = window_time;
  rep.T1_main = phase1_time(p, ConstantVariant::kMainText);
  rep.T1_appx = phase1_time(p, ConstantVariant::kAppendix);
  rep.T2 = phase2_time(p);
  rep.T3_main = detail::guarded([&] { return phase3_time(p, ConstantVariant::kMainText); });
  rep.T3_appx = detail::guarded([&] { return phase3_time(p, ConstantVariant::kAppendix); });

  std::vector<std::int64_t> checkpoints;
  for (double t : {rep.T3_main, rep.T3_appx}) {
    checkpoints.push_back(std::isnan(t) ? -1 : window_steps(rep.T1_main + rep.T2 + std::max(t, 0.0), p.eta));
  }
  // The appendix variant uses its own T1.
  if (!std::isnan(rep.T3_appx)) {
    checkpoints[1] = window_steps(rep.T1_appx + rep.T2 + std::max(rep.T3_appx, 0.0), p.eta);
  }

  rep.replicas.resize(replicas);
  detail::run_tasks(replicas, opts, [&](std::int64_t r) {
    RunConfig c = config;
    c.mu = p.mu;
    c.eta = p.eta;
    c.seed = replica_seed(config.seed, r);
    rep.replicas[r] = run_phases(model, c, p, window_time, checkpoints);
  });

  std::int64_t esc_main = 0, esc_appx = 0, trav = 0, conv_main = 0, conv_appx = 0;
  for (const auto& run : rep.replicas) {
    const auto& t = run.times;
    esc_main += t.t1 && *t.t1 <= rep.T1_main;
    esc_appx += t.t1 && *t.t1 <= rep.T1_appx;
    trav += t.t2 && *t.t2 <= rep.T2;
    conv_main += run.residual_at[0] <= p.eps;
    conv_appx += run.residual_at[1] <= p.eps;
  }
  rep.escape_main = wilson_interval(esc_main, replicas);
  rep.escape_appx = wilson_interval(esc_appx, replicas);
  rep.traverse = wilson_interval(trav, replicas);
  if (!std::isnan(rep.T3_main)) rep.converge_main = wilson_interval(conv_main, replicas);
  if (!std::isnan(rep.T3_appx)) rep.converge_appx = wilson_interval(conv_appx, replicas);
  return rep;
}

// ---------------------------------------------------------------------------
// Saddle escape

/// Fraction of replicas whose rescaled displacement max_i |h_i − (e_j)_i|/√η
/// from the starting saddle e_j exceeds `level` within `horizon` steps.
inline Proportion escape_probability(const SpectralModel& model, const RunConfig& config, double level,
                                     std::int64_t horizon, int replicas = 100,
                                     const ExecutionOptions& opts = {}) {
  const int d = model.dim();
  std::vector<double> h0(d);
  model.rotate(config.init, h0);
  int saddle = -1;
  for (int i = 0; i < d; ++i) {
    if (std::abs(std::abs(h0[i]) - 1.0) <= 1e-12) saddle = i;
  }
  if (saddle < 0) throw Error(ErrorCode::kInvalidArgument, "escape_probability needs an eigenvector start");
  if (!(config.eta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "eta must be positive");

  const double threshold = level * std::sqrt(config.eta);
  std::vector<char> escaped(replicas, 0);
  detail::run_tasks(replicas, opts, [&](std::int64_t r) {
    RunConfig c = config;
    c.horizon = horizon;
    c.stride = std::max<std::int64_t>(horizon, 1);
    c.seed = replica_seed(config.seed, r);
    std::vector<double> h(d);
    run_trajectory(model, c, [&](const StepView& s) {
      model.rotate(s.next, h);
      for (int i = 0; i < d; ++i) {
        if (std::abs(h[i] - h0[i]) > threshold) {
          escaped[r] = 1;
          return false;
        }
      }
      return true;
    });
  });
  std::int64_t n = 0;
  for (char e : escaped) n += e;
  return wilson_interval(n, replicas);
}

// ---------------------------------------------------------------------------
// Speedup

/// Empirical and predicted effective iteration counts at one delay. Index 0..2
/// are phases I..III; `total` covers replicas that reached all three.
struct SpeedupPoint {
  int tau = 0;
  int replicas = 0;
  int reached[3] = {0, 0, 0};
  double steps[3] = {kNaN, kNaN, kNaN};      // mean measured step count
  double empirical[3] = {kNaN, kNaN, kNaN};  // steps / τ
  double predicted_main[3] = {kNaN, kNaN, kNaN};
  double predicted_appx[3] = {kNaN, kNaN, kNaN};
  double ratio[3] = {kNaN, kNaN, kNaN};  // previous point's empirical / this one's
  double total_steps = kNaN;
  double total_empirical = kNaN;
  double total_ratio = kNaN;
};

inline std::vector<SpeedupPoint> speedup_curve(const SpectralModel& model, const RunConfig& config,
                                               const PhaseParams& p, std::span<const int> taus,
                                               int replicas, double window_time = 1.0,
                                               const ExecutionOptions& opts = {}) {
  if (replicas < 1) throw Error(ErrorCode::kInvalidArgument, "replicas must be >= 1");
  p.validate();
  const std::int64_t per_tau = replicas;
  std::vector<PhaseRun> runs(taus.size() * per_tau);
  detail::run_tasks(static_cast<std::int64_t>(runs.size()), opts, [&](std::int64_t task) {
    RunConfig c = config;
    c.mu = p.mu;
    c.eta = p.eta;
    c.delay = DelayModel::fixed(taus[task / per_tau]);
    c.seed = replica_seed(config.seed, task % per_tau);
    runs[task] = run_phases(model, c, p, window_time);
  });

  std::vector<SpeedupPoint> out;
  for (std::size_t t = 0; t < taus.size(); ++t) {
    SpeedupPoint pt;
    pt.tau = taus[t];
    pt.replicas = replicas;
    const double tau = std::max(pt.tau, 1);
    double sums[3] = {0, 0, 0}, total = 0.0;
    int complete = 0;
    for (std::int64_t r = 0; r < per_tau; ++r) {
      const auto& times = runs[t * per_tau + r].times;
      const std::optional<std::int64_t> ends[3] = {times.k1, times.k2, times.k3};
      std::int64_t start = 0;
      for (int ph = 0; ph < 3; ++ph) {
        if (!ends[ph]) break;
        sums[ph] += static_cast<double>(*ends[ph] - start);
        ++pt.reached[ph];
        start = *ends[ph];
      }
      if (times.k3) {
        total += static_cast<double>(*times.k3);
        ++complete;
      }
    }
    for (int ph = 0; ph < 3; ++ph) {
      if (pt.reached[ph]) {
        pt.steps[ph] = sums[ph] / pt.reached[ph];
        pt.empirical[ph] = pt.steps[ph] / tau;
      }
      pt.predicted_main[ph] =
          detail::guarded([&] { return effective_complexity(ph + 1, p, tau, ConstantVariant::kMainText); });
      pt.predicted_appx[ph] =
          detail::guarded([&] { return effective_complexity(ph + 1, p, tau, ConstantVariant::kAppendix); });
      if (!out.empty()) pt.ratio[ph] = out.back().empirical[ph] / pt.empirical[ph];
    }
    if (complete) {
      pt.total_steps = total / complete;
      pt.total_empirical = pt.total_steps / tau;
    }
    if (!out.empty()) pt.total_ratio = out.back().total_empirical / pt.total_empirical;
    out.push_back(pt);
  }
  return out;
}

}  // namespace asynclab
