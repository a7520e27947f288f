#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>

#include "asynclab/error.hpp"

namespace asynclab {

/// Staleness process generating τ_k, i.i.d. across steps.
struct DelayModel {
  enum class Kind { kFixed, kUniformBounded, kGeometric, kPoisson };

  Kind kind = Kind::kFixed;
  /// τ for kFixed, τ_max for kUniformBounded, mean τ̄ otherwise.
  double parameter = 0.0;
  /// History-buffer limit; unbounded kinds default to ⌈4τ̄⌉.
  std::optional<int> cap;

  static DelayModel fixed(int tau) { return checked({Kind::kFixed, double(tau), std::nullopt}); }
  static DelayModel uniform_bounded(int tau_max) {
    return checked({Kind::kUniformBounded, double(tau_max), std::nullopt});
  }
  static DelayModel geometric(double mean, std::optional<int> cap = std::nullopt) {
    return checked({Kind::kGeometric, mean, cap});
  }
  static DelayModel poisson(double mean, std::optional<int> cap = std::nullopt) {
    return checked({Kind::kPoisson, mean, cap});
  }

  bool bounded() const { return kind == Kind::kFixed || kind == Kind::kUniformBounded; }

  /// Largest delay the model can emit (post-clip).
  int capacity() const {
    if (bounded()) return static_cast<int>(parameter);
    if (cap) return *cap;
    return std::max(1, static_cast<int>(std::ceil(4.0 * parameter)));
  }

  /// Nominal mean before clipping.
  double mean() const {
    switch (kind) {
      case Kind::kFixed: return parameter;
      case Kind::kUniformBounded: return parameter / 2.0;
      default: return parameter;
    }
  }

  std::string describe() const {
    const char* names[] = {"fixed", "uniform", "geometric", "poisson"};
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s(%g,cap=%d)", names[static_cast<int>(kind)], parameter,
                  capacity());
    return buf;
  }

 private:
  static DelayModel checked(DelayModel m) {
    if (!(m.parameter >= 0.0) || !std::isfinite(m.parameter)) {
      throw Error(ErrorCode::kInvalidArgument, "delay parameter must be non-negative");
    }
    if (m.bounded() && m.parameter != std::floor(m.parameter)) {
      throw Error(ErrorCode::kInvalidArgument, "bounded delays must be integers");
    }
    if (m.cap && *m.cap < 0) throw Error(ErrorCode::kInvalidArgument, "cap must be non-negative");
    return m;
  }
};

struct DelayDraw {
  int tau = 0;
  bool capped = false;         // raw draw exceeded the buffer cap
  bool history_clipped = false;  // raw draw reached before v_0
};

/// τ_k ∈ [0, min(k, cap)]. Fixed delays consume no randomness.
template <class Rng>
DelayDraw generate_delay(const DelayModel& model, std::int64_t k, Rng& rng) {
  std::int64_t raw = 0;
  switch (model.kind) {
    case DelayModel::Kind::kFixed:
      raw = static_cast<std::int64_t>(model.parameter);
      break;
    case DelayModel::Kind::kUniformBounded:
      raw = std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(model.parameter))(rng);
      break;
    case DelayModel::Kind::kGeometric:
      raw = model.parameter > 0.0
                ? std::geometric_distribution<std::int64_t>(1.0 / (1.0 + model.parameter))(rng)
                : 0;
      break;
    case DelayModel::Kind::kPoisson:
      raw = model.parameter > 0.0 ? std::poisson_distribution<std::int64_t>(model.parameter)(rng) : 0;
      break;
  }
  DelayDraw draw;
  const std::int64_t cap = model.capacity();
  if (raw > cap) {
    raw = cap;
    draw.capped = true;
  }
  if (raw > k) {
    raw = k;
    draw.history_clipped = true;
  }
  draw.tau = static_cast<int>(raw);
  return draw;
}

}  // namespace asynclab
