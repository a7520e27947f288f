#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "asynclab/error.hpp"
#include "asynclab/spectral_model.hpp"

namespace asynclab {

// Closed forms for the limiting ODE/SDE and the phase-time predictions.
// Coordinates are 0-based and rotated (h = Qᵀv): index 0 is the leading
// eigendirection.

/// The phase-time formulas exist in two versions whose constants differ:
/// the headline statement and the constants its proof actually derives.
enum class ConstantVariant { kMainText, kAppendix };

enum class Regime { kOde, kSde };

struct PhaseParams {
  double eps = 1e-3;
  double delta = 0.0;
  double gamma = 0.5;
  double nu = 0.5;
  double mu = 0.0;
  double eta = 5e-4;
  const SpectralModel* model = nullptr;

  /// δ = c_δ·sqrt(η).
  static PhaseParams make(const SpectralModel& model, double mu, double eta, double eps,
                          double nu, double gamma = 0.5, double delta_scale = 1.0) {
    PhaseParams p;
    p.model = &model;
    p.mu = mu;
    p.eta = eta;
    p.eps = eps;
    p.nu = nu;
    p.gamma = gamma;
    p.delta = delta_scale * std::sqrt(eta);
    return p;
  }

  void validate() const {
    if (model == nullptr) throw Error(ErrorCode::kInvalidArgument, "PhaseParams without a model");
    if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "eps must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::kInvalidArgument, "delta must lie in (0, 1)");
    if (!(nu > 0.0 && nu < 1.0)) throw Error(ErrorCode::kInvalidArgument, "nu must lie in (0, 1)");
    if (!(mu >= 0.0 && mu < 1.0)) throw Error(ErrorCode::kInvalidArgument, "mu must lie in [0, 1)");
    if (!(eta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "eta must be positive");
  }
};

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Φ^{-1}(p): Acklam's rational approximation followed by one Newton step
/// against the erfc-based CDF.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kProbabilityOutOfRange, "p must lie in (0, 1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Newton polish on Φ(x) − p; the upper tail goes through the complement.
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  const double err = p > 0.5 ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2)
                             : normal_cdf(x) - p;
  return x - err / density;
}

/// Closed-form solution of V' = (1/(1−μ))[ΣV − VᵀΣV·V] in rotated
/// coordinates. The largest active exponential is factored out so the
/// evaluation never overflows.
inline std::vector<double> ode_solution(std::span<const double> h0, double t,
                                        const SpectralModel& model, double mu) {
  const int d = model.dim();
  if (static_cast<int>(h0.size()) != d) throw Error(ErrorCode::kInvalidArgument, "h0 dimension mismatch");
  if (!(t >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "t must be >= 0");
  double lead = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < d; ++i) {
    if (h0[i] != 0.0) lead = std::max(lead, model.eigenvalue(i));
  }
  if (!std::isfinite(lead)) throw Error(ErrorCode::kInvalidArgument, "h0 must be non-zero");

  const double rate = t / (1.0 - mu);
  std::vector<double> h(d);
  double norm2 = 0.0;
  for (int i = 0; i < d; ++i) {
    h[i] = h0[i] == 0.0 ? 0.0 : h0[i] * std::exp((model.eigenvalue(i) - lead) * rate);
    norm2 += h[i] * h[i];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : h) x *= inv;
  return h;
}

/// OU stationary second moment α²_{i1} / (2(1−μ)(λ₁−λ_i)).
inline double ou_stationary_moment(int i, const SpectralModel& model, double mu) {
  if (i == 0) throw Error(ErrorCode::kIndexIsLeading, "the leading coordinate has no OU limit");
  if (i < 0 || i >= model.dim()) throw Error(ErrorCode::kInvalidArgument, "coordinate out of range");
  const double a = model.alpha(i, 0);
  return a * a / (2.0 * (1.0 - mu) * (model.eigenvalue(0) - model.eigenvalue(i)));
}

/// E[U_i(t)²] for dU = ((λ_i−λ₁)/(1−μ))U dt + (α_{i,1}/(1−μ)) dB with
/// U_i(0)² = u0_sq.
inline double ou_second_moment(double u0_sq, int i, double t, const SpectralModel& model, double mu) {
  const double stationary = ou_stationary_moment(i, model, mu);
  if (!(t >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "t must be >= 0");
  if (std::isinf(t)) return stationary;
  const double decay = std::exp(-2.0 * (model.eigenvalue(0) - model.eigenvalue(i)) * t / (1.0 - mu));
  return stationary + (u0_sq - stationary) * decay;
}

/// η·Σ_{i≥2} of the OU stationary moments: the mean squared distance from e₁
/// that the iterate settles to near the optimum.
inline double stationary_residual(const SpectralModel& model, double mu, double eta) {
  double s = 0.0;
  for (int i = 1; i < model.dim(); ++i) s += ou_stationary_moment(i, model, mu);
  return eta * s;
}

/// Phase III: time for Σ_{i≥2} H_i² ≤ ε from the δ-neighborhood of e₁.
/// The result is negative when δ² is already far inside ε.
inline double phase3_time(const PhaseParams& p, ConstantVariant variant = ConstantVariant::kMainText) {
  p.validate();
  const double gap = p.model->eigengap();
  const bool main = variant == ConstantVariant::kMainText;
  const double scaled = (1.0 - p.mu) * gap;
  const double denom = scaled * p.eps - (main ? 4.0 : 2.0) * p.eta * p.model->phi();
  if (!(denom > 0.0)) {
    throw Error(ErrorCode::kStepTooLarge,
                "(1-mu)(l1-l2)eps must exceed " + std::string(main ? "4" : "2") + "*eta*phi");
  }
  const double num = (main ? 8.0 : 1.0) * scaled * p.delta * p.delta;
  return (1.0 - p.mu) / (2.0 * gap) * std::log(num / denom);
}

/// Phase II: deterministic transit of H₁² from δ² to 1−δ².
inline double phase2_time(const PhaseParams& p) {
  if (p.model == nullptr) throw Error(ErrorCode::kInvalidArgument, "PhaseParams without a model");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw Error(ErrorCode::kInvalidArgument, "delta must lie in (0, 1)");
  // The two-coordinate flow moves log(a₁/(1−a₁)) at rate 2g/(1−μ); going from
  // δ² to 1−δ² covers twice log((1−δ²)/δ²).
  const double d2 = p.delta * p.delta;
  return (1.0 - p.mu) / p.model->eigengap() * std::log((1.0 - d2) / d2);
}

/// Phase I: escape time from the saddle e₂ with probability ≥ 1−ν.
inline double phase1_time(const PhaseParams& p, ConstantVariant variant = ConstantVariant::kMainText) {
  p.validate();
  const double gap = p.model->eigengap();
  const double level = variant == ConstantVariant::kMainText ? (1.0 + p.nu / 2.0) / 2.0 : (1.0 + p.nu) / 2.0;
  const double q = normal_quantile(level);
  const double a12 = p.model->alpha(0, 1);
  const double arg = 2.0 * (1.0 - p.mu) * p.delta * p.delta * gap / (p.eta * q * q * a12 * a12) + 1.0;
  return (1.0 - p.mu) / (2.0 * gap) * std::log(arg);
}

/// Admissible staleness scale: c_τ(1−μ)²/(λ₁η^{1−γ}) in the ODE regime,
/// c_τ(1−μ)²/((λ₁+C_d)η^{1/2−γ}) in the SDE regime.
inline double delay_budget(double mu, double eta, double gamma, const SpectralModel& model,
                           Regime regime, double c_tau = 1.0) {
  const double l1 = model.eigenvalue(0);
  const double m2 = (1.0 - mu) * (1.0 - mu);
  if (regime == Regime::kOde) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::kGammaOutOfRange, "ODE regime needs gamma in (0, 1]");
    return c_tau * m2 / (l1 * std::pow(eta, 1.0 - gamma));
  }
  if (!(gamma > 0.0 && gamma <= 0.5)) throw Error(ErrorCode::kGammaOutOfRange, "SDE regime needs gamma in (0, 0.5]");
  return c_tau * m2 / ((l1 + model.data_bound()) * std::pow(eta, 0.5 - gamma));
}

/// Per-worker iteration count T_phase/(τη).
inline double effective_complexity(int phase, const PhaseParams& p, double tau,
                                   ConstantVariant variant = ConstantVariant::kMainText) {
  if (!(tau >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be >= 1");
  double t = 0.0;
  switch (phase) {
    case 1: t = phase1_time(p, variant); break;
    case 2: t = phase2_time(p); break;
    case 3: t = phase3_time(p, variant); break;
    default: throw Error(ErrorCode::kInvalidArgument, "phase must be 1, 2 or 3");
  }
  return t / (tau * p.eta);
}

/// Largest γ ∈ (0, 1] with both norm-bound terms τη/(1−μ)² and η/(1−μ)³ at
/// most η^γ; the norm bound 1 + O(η^γ) then applies. Returns a value ≤ 0 when
/// the run lies outside that regime.
inline double norm_bound_exponent(double mu, double eta, double tau) {
  const double log_eta = std::log(eta);
  const double m = 1.0 - mu;
  double gamma = 1.0 - std::log(m * m * m) / log_eta;
  if (tau > 0.0) gamma = std::min(gamma, 1.0 - std::log(m * m / tau) / log_eta);
  return std::min(gamma, 1.0);
}

}  // namespace asynclab
