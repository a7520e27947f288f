#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <gtest/gtest.h>

#include "asynclab/theory.hpp"

using namespace asynclab;

namespace {

SpectralModel reference_model() { return build_spectral_model(Eigen::Vector4d(4, 3, 2, 1)); }

std::vector<double> rhs(const std::vector<double>& h, const Eigen::VectorXd& lam, double mu) {
  double q = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) q += lam[i] * h[i] * h[i];
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = (lam[i] * h[i] - q * h[i]) / (1 - mu);
  return out;
}

// Classic RK4 on H' = (1/(1−μ))[ΛH − HᵀΛH·H].
std::vector<double> rk4(std::vector<double> h, double t, double step, const Eigen::VectorXd& lam, double mu) {
  const int n = static_cast<int>(std::llround(t / step));
  auto axpy = [](const std::vector<double>& a, const std::vector<double>& b, double s) {
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + s * b[i];
    return r;
  };
  for (int k = 0; k < n; ++k) {
    const auto k1 = rhs(h, lam, mu);
    const auto k2 = rhs(axpy(h, k1, step / 2), lam, mu);
    const auto k3 = rhs(axpy(h, k2, step / 2), lam, mu);
    const auto k4 = rhs(axpy(h, k3, step), lam, mu);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += step / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  return h;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(NormalQuantile, KnownValues) {
  EXPECT_EQ(normal_quantile(0.5), 0.0);
  EXPECT_NEAR(normal_quantile(0.975), 1.959964, 1e-6);
  EXPECT_NEAR(normal_quantile(0.025), -1.959964, 1e-6);
}

TEST(NormalQuantile, MatchesBoostAndRoundTrips) {
  const boost::math::normal n;
  std::vector<double> grid{1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.02425, 0.05, 0.2, 0.5, 0.625, 0.75, 0.9, 0.975, 0.99};
  for (std::size_t i = 0, m = grid.size(); i < m; ++i) grid.push_back(1 - grid[i]);
  for (double p = 0.001; p < 1; p += 0.001) grid.push_back(p);
  for (double p : grid) {
    const double x = normal_quantile(p);
    EXPECT_NEAR(x, boost::math::quantile(n, p), 1e-9) << p;
    EXPECT_NEAR(normal_cdf(x), p, 1e-9) << p;
  }
}

TEST(NormalQuantile, RejectsOutOfRange) {
  for (double p : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
    EXPECT_EQ(code_of([&] { normal_quantile(p); }), ErrorCode::kProbabilityOutOfRange);
  }
}

TEST(OdeSolution, IdentityAtZero) {
  const auto m = reference_model();
  const std::vector<double> h0{0.1, 0.7, -0.5, std::sqrt(1 - 0.01 - 0.49 - 0.25)};
  const auto h = ode_solution(h0, 0.0, m, 0.3);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(h[i], h0[i], 1e-15);
}

TEST(OdeSolution, ConvergesToLeadingEigenvector) {
  const auto m = reference_model();
  const auto h = ode_solution(std::vector<double>{0.5, 0.5, 0.5, 0.5}, 200.0, m, 0.0);
  EXPECT_NEAR(h[0], 1.0, 1e-12);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(h[i], 0.0, 1e-12);
}

TEST(OdeSolution, MatchesRk4) {
  const auto m = reference_model();
  const std::vector<double> h0{0.5, 0.5, 0.5, 0.5};
  const auto h = ode_solution(h0, 1.0, m, 0.5);
  const auto r = rk4(h0, 1.0, 1e-4, m.eigenvalues(), 0.5);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(h[i], r[i], 1e-8);
}

TEST(OdeSolution, StaysOnSphereAndSolvesTheOde) {
  const auto m = reference_model();
  const std::vector<double> h0{0.05, 0.8, -0.3, std::sqrt(1 - 0.0025 - 0.64 - 0.09)};
  for (double mu : {0.0, 0.5, 0.9}) {
    for (double t = 1e-3; t <= 1e3; t *= 1.7) {
      const auto h = ode_solution(h0, t, m, mu);
      double n2 = 0.0;
      for (double x : h) n2 += x * x;
      EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-12);
    }
    for (double t : {0.01, 0.3, 1.0, 2.5}) {
      const double dt = 1e-6;
      const auto hp = ode_solution(h0, t + dt, m, mu);
      const auto hm = ode_solution(h0, t - dt, m, mu);
      const auto f = rhs(ode_solution(h0, t, m, mu), m.eigenvalues(), mu);
      for (int i = 0; i < 4; ++i) EXPECT_NEAR((hp[i] - hm[i]) / (2 * dt), f[i], 1e-6);
    }
  }
}

TEST(OdeSolution, Semigroup) {
  const auto m = reference_model();
  const std::vector<double> h0{0.1, 0.9, 0.3, std::sqrt(1 - 0.01 - 0.81 - 0.09)};
  for (double mu : {0.0, 0.7}) {
    const auto a = ode_solution(ode_solution(h0, 0.4, m, mu), 1.3, m, mu);
    const auto b = ode_solution(h0, 1.7, m, mu);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
  }
}

TEST(OdeSolution, NoOverflowNearUnitMomentum) {
  const auto m = reference_model();
  const auto h = ode_solution(std::vector<double>{0.0, 0.6, 0.8, 0.0}, 1e4, m, 0.999);
  // Without a leading component the flow goes to e₂.
  EXPECT_NEAR(h[1], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(h[2]));
}

TEST(OuSecondMoment, BoundaryCases) {
  const auto m = reference_model();
  EXPECT_NEAR(ou_second_moment(0.7, 1, 0.0, m, 0.5), 0.7, 1e-14);
  const double s = ou_stationary_moment(1, m, 0.5);
  EXPECT_DOUBLE_EQ(s, 12.0 / (2 * 0.5 * 1.0));
  for (double t : {0.1, 1.0, 10.0}) EXPECT_NEAR(ou_second_moment(s, 1, t, m, 0.5), s, 1e-12 * s);
  EXPECT_DOUBLE_EQ(ou_second_moment(3.0, 2, INFINITY, m, 0.0), ou_stationary_moment(2, m, 0.0));
  EXPECT_EQ(code_of([&] { ou_second_moment(0.0, 0, 1.0, m, 0.0); }), ErrorCode::kIndexIsLeading);
}

TEST(OuSecondMoment, SolvesTheMomentOde) {
  const auto m = reference_model();
  for (double mu : {0.0, 0.5, 0.9}) {
    for (int i = 1; i < 4; ++i) {
      const double gap = m.eigenvalue(0) - m.eigenvalue(i);
      const double a2 = m.alpha(i, 0) * m.alpha(i, 0);
      for (double t : {0.05, 0.5, 2.0}) {
        const double dt = 1e-6;
        const double d = (ou_second_moment(0.3, i, t + dt, m, mu) - ou_second_moment(0.3, i, t - dt, m, mu)) / (2 * dt);
        const double f = -2 * gap / (1 - mu) * ou_second_moment(0.3, i, t, m, mu) + a2 / ((1 - mu) * (1 - mu));
        EXPECT_NEAR(d, f, 1e-6 * std::abs(f) + 1e-7);
      }
    }
  }
}

TEST(OuSecondMoment, MatchesEulerMaruyama) {
  // dU = ((λ₂−λ₁)/(1−μ))U dt + (α₂₁/(1−μ)) dB, U(0)=0, estimated at t=1.
  const auto m = reference_model();
  const double mu = 0.0, dt = 1e-3, t = 1.0;
  const int paths = 20'000, steps = static_cast<int>(t / dt);
  const double drift = (m.eigenvalue(1) - m.eigenvalue(0)) / (1 - mu);
  const double diffusion = m.alpha(1, 0) / (1 - mu) * std::sqrt(dt);
  boost::random::mt19937 rng(11);
  boost::random::normal_distribution<double> normal;
  double sum = 0.0, sum2 = 0.0;
  for (int p = 0; p < paths; ++p) {
    double u = 0.0;
    for (int k = 0; k < steps; ++k) u += drift * u * dt + diffusion * normal(rng);
    sum += u * u;
    sum2 += u * u * u * u;
  }
  const double mean = sum / paths;
  const double se = std::sqrt((sum2 / paths - mean * mean) / paths);
  EXPECT_NEAR(mean, ou_second_moment(0.0, 1, t, m, mu), 3 * se);
}

TEST(StationaryResidual, SumsTheOuLevels) {
  const auto m = reference_model();
  const double expected = 5e-4 * (12.0 / 0.2 + 8.0 / 0.4 + 4.0 / 0.6);
  EXPECT_NEAR(stationary_residual(m, 0.9, 5e-4), expected, 1e-15);
}

TEST(Phase3Time, SmallStepLimit) {
  // gap 1, μ = 0, δ² = ε, η → 0: the main-text value tends to ½·log 8.
  const auto m = build_spectral_model(Eigen::Vector2d(2, 1));
  PhaseParams p = PhaseParams::make(m, 0.0, 1e-14, 1e-2, 0.5);
  p.delta = std::sqrt(p.eps);
  EXPECT_NEAR(phase3_time(p), 0.5 * std::log(8.0), 1e-9);
  EXPECT_NEAR(phase3_time(p, ConstantVariant::kAppendix), 0.0, 1e-9);
}

TEST(Phase3Time, LinearInOneMinusMu) {
  // η tied to (1−μ) keeps the log argument fixed.
  const auto m = reference_model();
  double ratio = 0.0;
  for (double mu : {0.0, 0.5, 0.9, 0.99, 0.999}) {
    PhaseParams p = PhaseParams::make(m, mu, (1 - mu) * 1e-6, 1e-3, 0.5);
    p.delta = 0.05;
    const double r = phase3_time(p) / (1 - mu);
    if (mu == 0.0) ratio = r;
    EXPECT_NEAR(r, ratio, 1e-12 * std::abs(ratio));
  }
}

TEST(Phase3Time, LargeStepIsInfeasible) {
  // η = (1−μ)ε(λ₁−λ₂)/φ makes (1−μ)(λ₁−λ₂)ε − 4ηφ negative.
  const auto m = reference_model();
  const double eta = 0.1 * 1e-3 * 1.0 / 40.0;
  EXPECT_DOUBLE_EQ(eta, 2.5e-6);
  const auto p = PhaseParams::make(m, 0.9, eta, 1e-3, 0.5);
  EXPECT_EQ(code_of([&] { phase3_time(p); }), ErrorCode::kStepTooLarge);
  EXPECT_EQ(code_of([&] { phase3_time(p, ConstantVariant::kAppendix); }), ErrorCode::kStepTooLarge);
}

TEST(Phase3Time, HandEvaluation) {
  // η = 2.5e-6 / 8 is feasible for both variants.
  const auto m = reference_model();
  const double eta = 3.125e-7;
  const auto p = PhaseParams::make(m, 0.9, eta, 1e-3, 0.5);
  const double main = 0.05 * std::log(8 * 0.1 * eta / (1e-4 - 4 * eta * 40));
  const double appx = 0.05 * std::log(0.1 * eta / (1e-4 - 2 * eta * 40));
  EXPECT_NEAR(phase3_time(p), main, 1e-12);
  EXPECT_NEAR(phase3_time(p, ConstantVariant::kAppendix), appx, 1e-12);
  EXPECT_NEAR(main, -0.26491586832740, 1e-12);
  EXPECT_NEAR(appx, -0.38916120081680, 1e-12);
}

TEST(Phase2Time, KnownValues) {
  const auto m = build_spectral_model(Eigen::Vector2d(2, 1));
  PhaseParams p = PhaseParams::make(m, 0.0, 1e-3, 1e-3, 0.5);
  p.delta = std::sqrt(0.5);
  EXPECT_NEAR(phase2_time(p), 0.0, 1e-15);
  p.delta = 0.1;
  // Twice ½·log 99: a₁ must climb from δ² through ½ to 1−δ².
  EXPECT_NEAR(phase2_time(p), std::log(99.0), 1e-12);
  EXPECT_NEAR(phase2_time(p), 4.59512, 1e-5);
}

TEST(Phase2Time, EqualsOdeTransitTime) {
  const auto m = reference_model();
  for (double mu : {0.0, 0.5, 0.9}) {
    for (double delta : {0.05, 0.2}) {
      PhaseParams p = PhaseParams::make(m, mu, 1e-3, 1e-3, 0.5);
      p.delta = delta;
      const std::vector<double> h0{delta, std::sqrt(1 - delta * delta), 0, 0};
      auto f = [&](double t) {
        const auto h = ode_solution(h0, t, m, mu);
        return h[0] * h[0] - (1 - delta * delta);
      };
      boost::uintmax_t iters = 200;
      const auto [lo, hi] = boost::math::tools::toms748_solve(
          f, 0.0, 20.0, [](double a, double b) { return std::abs(a - b) < 1e-14; }, iters);
      EXPECT_NEAR(0.5 * (lo + hi), phase2_time(p), 1e-9);
    }
  }
}

TEST(Phase1Time, HandEvaluation) {
  // ν = 0.5, μ = 0, gap 1, α₁₂² = 12, δ² = η.
  const auto m = reference_model();
  const auto p = PhaseParams::make(m, 0.0, 2.5e-6, 1e-3, 0.5);
  const boost::math::normal n;
  const double q_main = boost::math::quantile(n, 0.625);
  const double q_appx = boost::math::quantile(n, 0.75);
  const double main = 0.5 * std::log(2.0 / (q_main * q_main * 12.0) + 1);
  const double appx = 0.5 * std::log(2.0 / (q_appx * q_appx * 12.0) + 1);
  EXPECT_NEAR(phase1_time(p), main, 1e-9);
  EXPECT_NEAR(phase1_time(p, ConstantVariant::kAppendix), appx, 1e-9);
  EXPECT_NEAR(main, 0.48567991466, 1e-10);
  EXPECT_NEAR(appx, 0.15607204498, 1e-10);
}

TEST(Phase1Time, LimitsAndMonotonicity) {
  const auto m = reference_model();
  PhaseParams p = PhaseParams::make(m, 0.3, 1e-3, 1e-3, 0.5);
  p.delta = 1e-9;
  EXPECT_NEAR(phase1_time(p), 0.0, 1e-12);
  double prev = 0.0;
  for (double d : {0.01, 0.03, 0.1, 0.3}) {
    p.delta = d;
    const double t = phase1_time(p);
    EXPECT_GT(t, prev);
    prev = t;
  }
  // Same gap, larger α₁₂²: faster escape.
  const auto wide = build_spectral_model(Eigen::Vector4d(5, 4, 2, 1));
  PhaseParams q = p;
  q.model = &wide;
  EXPECT_LT(phase1_time(q), phase1_time(p));
}

TEST(PhaseTimes, LinearInOneMinusMuWithFixedLogArguments) {
  const auto m = reference_model();
  for (double mu : {0.2, 0.6, 0.95}) {
    PhaseParams base = PhaseParams::make(m, 0.0, 1e-4, 1e-3, 0.5);
    base.delta = 0.05;
    PhaseParams p = base;
    p.mu = mu;
    p.eta = (1 - mu) * base.eta;  // keeps (1−μ)δ²/η fixed in T1
    EXPECT_NEAR(phase1_time(p), (1 - mu) * phase1_time(base), 1e-12);
    EXPECT_NEAR(phase2_time(p), (1 - mu) * phase2_time(base), 1e-12);
  }
}

TEST(DelayBudget, Scaling) {
  const auto m = reference_model();
  for (auto regime : {Regime::kOde, Regime::kSde}) {
    const double r = delay_budget(0.9, 1e-3, 0.3, m, regime) / delay_budget(0.7, 1e-3, 0.3, m, regime);
    EXPECT_NEAR(r, 1.0 / 9.0, 1e-12);
  }
  EXPECT_NEAR(delay_budget(0.5, 1e-2, 0.5, m, Regime::kSde), delay_budget(0.5, 1e-6, 0.5, m, Regime::kSde), 1e-15);
  EXPECT_NEAR(delay_budget(0.0, 1e-4, 0.5, m, Regime::kOde, 2.0), 2.0 / (4.0 * 1e-2), 1e-12);
  EXPECT_NEAR(delay_budget(0.0, 1e-4, 0.25, m, Regime::kSde), 1.0 / ((4.0 + std::sqrt(10.0)) * 0.1), 1e-12);
  EXPECT_EQ(code_of([&] { delay_budget(0.5, 1e-3, 0.6, m, Regime::kSde); }), ErrorCode::kGammaOutOfRange);
  EXPECT_EQ(code_of([&] { delay_budget(0.5, 1e-3, 0.0, m, Regime::kOde); }), ErrorCode::kGammaOutOfRange);
  EXPECT_EQ(code_of([&] { delay_budget(0.5, 1e-3, 1.1, m, Regime::kOde); }), ErrorCode::kGammaOutOfRange);
}

TEST(DelayBudget, CalibratedOnOneMomentumPredictsTheOthers) {
  // Fit c_τ so the μ=0.9 budget is 30, then compare with the reported optimal
  // delays for the other momenta.
  const auto m = reference_model();
  const double eta = 5e-4, gamma = 0.5;
  const double c = 30.0 / delay_budget(0.9, eta, gamma, m, Regime::kSde);
  const std::pair<double, double> reported[] = {{0.7, 120}, {0.8, 80}, {0.85, 60}, {0.95, 10}};
  for (auto [mu, tau] : reported) {
    const double predicted = delay_budget(mu, eta, gamma, m, Regime::kSde, c);
    EXPECT_LE(std::max(predicted / tau, tau / predicted), 2.5) << mu;
  }
}

TEST(EffectiveComplexity, LinearSpeedup) {
  const auto m = reference_model();
  PhaseParams p = PhaseParams::make(m, 0.5, 1e-6, 1e-3, 0.5);
  p.delta = 0.05;
  for (int phase = 1; phase <= 3; ++phase) {
    EXPECT_DOUBLE_EQ(effective_complexity(phase, p, 8), effective_complexity(phase, p, 4) / 2);
  }
  EXPECT_DOUBLE_EQ(effective_complexity(2, p, 1), phase2_time(p) / p.eta);
  EXPECT_EQ(code_of([&] { effective_complexity(2, p, 0.5); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { effective_complexity(4, p, 1); }), ErrorCode::kInvalidArgument);
}

TEST(EffectiveComplexity, PhaseThreeMomentumDependence) {
  // τ at the SDE budget and η(μ) = (1−μ)η₀; compare with the closed-form
  // scaling (λ₁+C_d)φ^{1/2+γ} / ([(1−μ)g]^{3/2+γ} ε^{1/2+γ}) · log(...).
  const auto m = reference_model();
  const double eta0 = 1e-6, eps = 1e-3, gamma = 0.25, g = 1.0, phi = 40.0;
  auto display = [&](double mu) {
    const double eta = (1 - mu) * eta0;
    const double delta2 = 1e4 * eta;
    const double log_arg = 8 * (1 - mu) * g * delta2 / ((1 - mu) * g * eps - 4 * eta * phi);
    return (4 + std::sqrt(10.0)) * std::pow(phi, 0.5 + gamma) /
           (std::pow((1 - mu) * g, 1.5 + gamma) * std::pow(eps, 0.5 + gamma)) * std::log(log_arg);
  };
  auto computed = [&](double mu) {
    const double eta = (1 - mu) * eta0;
    const auto p = PhaseParams::make(m, mu, eta, eps, 0.5, gamma, 100.0);
    return effective_complexity(3, p, delay_budget(mu, eta, gamma, m, Regime::kSde, 1e3));
  };
  const double expected = display(0.9) / display(0.0);
  EXPECT_NEAR(computed(0.9) / computed(0.0), expected, 1e-9 * expected);
}

TEST(NormBoundExponent, Regimes) {
  EXPECT_DOUBLE_EQ(norm_bound_exponent(0.0, 5e-4, 0), 1.0);
  const double g = norm_bound_exponent(0.9, 5e-4, 30);
  // Both terms sit at or below η^γ.
  EXPECT_LE(30 * 5e-4 / 0.01, std::pow(5e-4, g) * (1 + 1e-12));
  EXPECT_LE(5e-4 / 1e-3, std::pow(5e-4, g) * (1 + 1e-12));
  EXPECT_LE(norm_bound_exponent(0.95, 5e-4, 0), 0.0);
}
