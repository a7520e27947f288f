#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "asynclab/delay.hpp"
#include "asynclab/error.hpp"
#include "asynclab/random.hpp"
#include "asynclab/run_config.hpp"
#include "asynclab/spectral_model.hpp"

namespace asynclab {

/// Σ_k = X_k X_kᵀ for one streamed sample.
struct RankOneSample {
  std::span<const double> x;
};

/// Σ_k = Σ: the noise-free update whose interpolation is the ODE limit.
struct MeanFieldSample {
  const SpectralModel* model;
};

/// g = (I − vvᵀ) Σ_k v. For a rank-one sample this is s·X − s²·v with s = Xᵀv,
/// evaluated in exactly that order.
inline void manifold_gradient(const RankOneSample& sample, std::span<const double> v,
                              std::span<double> g) {
  const std::size_t d = v.size();
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += sample.x[j] * v[j];
  const double s2 = s * s;
  for (std::size_t j = 0; j < d; ++j) g[j] = s * sample.x[j] - s2 * v[j];
}

inline void manifold_gradient(const MeanFieldSample& sample, std::span<const double> v,
                              std::span<double> g) {
  sample.model->apply_covariance(v, g);
  double q = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) q += v[j] * g[j];
  for (std::size_t j = 0; j < v.size(); ++j) g[j] -= q * v[j];
}

/// Iterate history for the delayed update: v_k, v_{k−1}, and a ring of the
/// last cap+1 iterates so that v_{k−τ} is an O(1) lookup.
class SolverState {
 public:
  SolverState(std::span<const double> init, int cap)
      : dim_(static_cast<int>(init.size())),
        cap_(cap),
        ring_(static_cast<std::size_t>(cap + 1) * init.size()),
        previous_(init.begin(), init.end()),
        next_(init.size()),
        gradient_(init.size()) {
    if (cap < 0) throw Error(ErrorCode::kInvalidArgument, "history cap must be >= 0");
    std::copy(init.begin(), init.end(), ring_.begin());
  }

  int dim() const { return dim_; }
  int cap() const { return cap_; }
  std::int64_t step() const { return step_; }

  std::span<const double> current() const { return slot(step_); }
  std::span<const double> previous() const { return previous_; }

  /// v_{k−τ}; reads before v_0 resolve to v_0.
  std::span<const double> lagged(int tau) const {
    if (tau > cap_) {
      throw Error(ErrorCode::kDelayExceedsCap,
                  "tau=" + std::to_string(tau) + " > cap=" + std::to_string(cap_));
    }
    const std::int64_t back = std::min<std::int64_t>(tau, step_);
    return slot(step_ - back);
  }

  /// Computes v_{k+1} without committing it and returns the stale read used.
  /// Staleness touches only the gradient; momentum uses v_k and v_{k−1}.
  template <class Sample>
  std::span<const double> stage(const Sample& sample, int tau, double eta, double mu) {
    const auto stale = lagged(tau);
    manifold_gradient(sample, stale, gradient_);
    const auto cur = current();
    for (int j = 0; j < dim_; ++j) {
      next_[j] = cur[j] + mu * (cur[j] - previous_[j]) + eta * gradient_[j];
    }
    return stale;
  }

  std::span<const double> staged() const { return next_; }

  void commit() {
    const auto cur = current();
    std::copy(cur.begin(), cur.end(), previous_.begin());
    ++step_;
    auto dst = slot_mut(step_);
    std::copy(next_.begin(), next_.end(), dst.begin());
  }

 private:
  std::span<const double> slot(std::int64_t k) const {
    const auto i = static_cast<std::size_t>(k % (cap_ + 1));
    return {ring_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<double> slot_mut(std::int64_t k) {
    const auto i = static_cast<std::size_t>(k % (cap_ + 1));
    return {ring_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }

  int dim_;
  int cap_;
  std::int64_t step_ = 0;
  std::vector<double> ring_;
  std::vector<double> previous_;
  std::vector<double> next_;
  std::vector<double> gradient_;
};

/// One Async-MSGD step:
/// v_{k+1} = v_k + μ(v_k − v_{k−1}) + η(I − v_{k−τ}v_{k−τ}ᵀ)Σ_k v_{k−τ}.
template <class Sample>
void async_step(SolverState& state, const Sample& sample, int tau, double eta, double mu) {
  state.stage(sample, tau, eta, mu);
  state.commit();
}

/// Recorded time series of the rotated iterates h_k = Qᵀv_k.
struct Trajectory {
  RunConfig config;
  std::string model_description;
  int dim = 0;

  std::vector<std::int64_t> steps;
  /// Delay used to produce the recorded iterate (0 for v_0).
  std::vector<int> taus;
  std::vector<double> rotated;  // row-major, dim per record
  std::vector<double> norms;

  bool mean_field = false;
  std::int64_t steps_run = 0;
  bool diverged = false;
  bool stopped = false;  // an observer ended the run early
  std::int64_t cap_clips = 0;
  std::int64_t history_clips = 0;
  std::int64_t delay_sum = 0;
  int max_delay = 0;

  // Streaming jump and norm checks over every step.
  double jump_bound = 0.0;  // 2 C_d η / (1 − μ)
  double max_jump = 0.0;
  std::int64_t jump_violations = 0;
  double max_norm_sq = 1.0;

  std::size_t size() const { return steps.size(); }
  std::span<const double> h(std::size_t r) const {
    return {rotated.data() + r * dim, static_cast<std::size_t>(dim)};
  }
  double coordinate_sq(std::size_t r, int i) const {
    const double x = rotated[r * dim + i];
    return x * x;
  }
  double alignment(std::size_t r) const { return coordinate_sq(r, 0); }
  /// Σ_{i≥2} (h_i)².
  double residual(std::size_t r) const {
    double s = 0.0;
    for (int i = 1; i < dim; ++i) s += coordinate_sq(r, i);
    return s;
  }
  double final_alignment() const { return alignment(size() - 1); }
  double final_error() const { return diverged ? 1.0 : 1.0 - final_alignment(); }
  double mean_delay() const { return steps_run ? double(delay_sum) / double(steps_run) : 0.0; }
};

/// Everything an observer can see about step k → k+1.
struct StepView {
  std::int64_t k;
  int tau;
  std::span<const double> x;  // empty in mean-field mode
  std::span<const double> stale;
  std::span<const double> current;
  std::span<const double> previous;
  std::span<const double> next;
};

/// Observers return void, or bool where false ends the run after the step.
struct NoObserver {
  void operator()(const StepView&) const {}
};

struct RunOptions {
  /// Replace X_kX_kᵀ by Σ (no data noise).
  bool mean_field = false;
};

/// Runs config.horizon steps of Async-MSGD. Data and delays come from two
/// streams split off config.seed, so the result depends only on
/// (seed, config, model). The observer runs before each step is committed.
/// The run ends early on divergence (‖v‖² − 1 > divergence_limit).
template <class Observer = NoObserver>
Trajectory run_trajectory(const SpectralModel& model, const RunConfig& config,
                          Observer&& observer = {}, RunOptions options = {}) {
  config.validate();
  const int d = model.dim();
  if (static_cast<int>(config.init.size()) != d) {
    throw Error(ErrorCode::kInvalidArgument, "init dimension does not match the model");
  }

  Trajectory traj;
  traj.config = config;
  traj.model_description = model.describe();
  traj.dim = d;
  traj.mean_field = options.mean_field;
  traj.jump_bound = 2.0 * model.data_bound() * config.eta / (1.0 - config.mu);

  const std::int64_t records = config.horizon / config.stride + 2;
  traj.steps.reserve(records);
  traj.taus.reserve(records);
  traj.norms.reserve(records);
  traj.rotated.reserve(records * d);

  std::vector<double> h(d);
  auto record = [&](std::int64_t k, int tau, std::span<const double> v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    model.rotate(v, h);
    traj.steps.push_back(k);
    traj.taus.push_back(tau);
    traj.norms.push_back(std::sqrt(n2));
    traj.rotated.insert(traj.rotated.end(), h.begin(), h.end());
  };

  Engine data_rng(split_seed(config.seed, kDataStream));
  Engine delay_rng(split_seed(config.seed, kDelayStream));
  SolverState state(config.init, config.delay.capacity());
  std::vector<double> x(d);
  const MeanFieldSample mean_field{&model};

  record(0, 0, state.current());
  for (std::int64_t k = 0; k < config.horizon; ++k) {
    const DelayDraw draw = generate_delay(config.delay, k, delay_rng);
    traj.cap_clips += draw.capped;
    traj.history_clips += draw.history_clipped;
    traj.delay_sum += draw.tau;
    traj.max_delay = std::max(traj.max_delay, draw.tau);

    std::span<const double> stale;
    if (options.mean_field) {
      stale = state.stage(mean_field, draw.tau, config.eta, config.mu);
    } else {
      sample_data(model, data_rng, x);
      stale = state.stage(RankOneSample{x}, draw.tau, config.eta, config.mu);
    }

    const auto cur = state.current();
    const auto next = state.staged();
    double jump2 = 0.0, n2 = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = next[j] - cur[j];
      jump2 += diff * diff;
      n2 += next[j] * next[j];
    }
    const double jump = std::sqrt(jump2);
    traj.max_jump = std::max(traj.max_jump, jump);
    traj.jump_violations += jump > traj.jump_bound;
    traj.max_norm_sq = std::max(traj.max_norm_sq, n2);

    const StepView view{k, draw.tau,
                        options.mean_field ? std::span<const double>{} : std::span<const double>(x),
                        stale, cur, state.previous(), next};
    bool keep_going = true;
    if constexpr (std::is_same_v<decltype(observer(view)), bool>) {
      keep_going = observer(view);
    } else {
      observer(view);
    }
    state.commit();
    traj.steps_run = k + 1;

    const bool diverged = !std::isfinite(n2) || n2 - 1.0 > config.divergence_limit;
    if ((k + 1) % config.stride == 0 || k + 1 == config.horizon || diverged || !keep_going) {
      record(k + 1, draw.tau, state.current());
    }
    if (diverged) {
      traj.diverged = true;
      break;
    }
    if (!keep_going) {
      traj.stopped = true;
      break;
    }
  }
  return traj;
}

}  // namespace asynclab
