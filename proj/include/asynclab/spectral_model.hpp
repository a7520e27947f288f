#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "asynclab/error.hpp"
#include "asynclab/random.hpp"

namespace asynclab {

/// X = Q Λ^{1/2} z with independent uniform ±1 signs z.
struct RademacherSampler {};

/// X = Q Λ^{1/2} z / sqrt(c) with z ~ N(0, I) conditioned on ‖z‖ ≤ radius;
/// c restores E[XXᵀ] = Σ exactly.
struct TruncatedGaussianSampler {
  double radius = 3.0;
};

using Sampler = std::variant<RademacherSampler, TruncatedGaussianSampler>;

inline constexpr double kOrthogonalityTolerance = 1e-10;
inline constexpr std::int64_t kDefaultMomentSamples = 1'000'000;

/// Covariance Σ = QΛQᵀ of the streaming data together with the constants the
/// limiting dynamics depend on. Immutable once built.
class SpectralModel {
 public:
  int dim() const { return static_cast<int>(eigenvalues_.size()); }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  double eigenvalue(int i) const { return eigenvalues_[i]; }
  double eigengap() const { return eigenvalues_[0] - eigenvalues_[1]; }
  const Eigen::MatrixXd& rotation() const { return rotation_; }
  bool rotation_is_identity() const { return identity_rotation_; }

  /// C_d with ‖X‖ ≤ C_d for every draw.
  double data_bound() const { return data_bound_; }

  /// α_{i,j} = sqrt(E[(Y_i)²(Y_j)²]) for Y = QᵀX, 0-based indices.
  const Eigen::MatrixXd& fourth_moments() const { return alpha_; }
  double alpha(int i, int j) const { return alpha_(i, j); }

  /// φ = Σ_j α²_{1,j}.
  double phi() const { return phi_; }

  const Sampler& sampler() const { return sampler_; }

  Eigen::MatrixXd covariance() const {
    return rotation_ * eigenvalues_.asDiagonal() * rotation_.transpose();
  }

  /// h = Qᵀ v.
  void rotate(std::span<const double> v, std::span<double> h) const {
    const int d = dim();
    if (identity_rotation_) {
      std::copy(v.begin(), v.end(), h.begin());
      return;
    }
    for (int i = 0; i < d; ++i) {
      const double* q = rotation_.col(i).data();
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += q[j] * v[j];
      h[i] = s;
    }
  }

  /// w = Σ v.
  void apply_covariance(std::span<const double> v, std::span<double> w) const {
    const int d = dim();
    if (identity_rotation_) {
      for (int i = 0; i < d; ++i) w[i] = eigenvalues_[i] * v[i];
      return;
    }
    Eigen::Map<const Eigen::VectorXd> vin(v.data(), d);
    Eigen::Map<Eigen::VectorXd> out(w.data(), d);
    out.noalias() = rotation_ * (eigenvalues_.asDiagonal() * (rotation_.transpose() * vin));
  }

  std::string describe() const {
    std::string s = "eigenvalues=(";
    for (int i = 0; i < dim(); ++i) {
      if (i) s += ",";
      s += format_number(eigenvalues_[i]);
    }
    s += ") rotation=";
    s += identity_rotation_ ? "identity" : "general";
    s += " sampler=";
    s += std::holds_alternative<RademacherSampler>(sampler_) ? "rademacher" : "truncated_gaussian";
    s += " C_d=" + format_number(data_bound_) + " phi=" + format_number(phi_);
    return s;
  }

  template <class Rng>
  void sample(Rng& rng, std::span<double> x) const;

 private:
  friend SpectralModel build_spectral_model(const Eigen::VectorXd&,
                                            const std::optional<Eigen::MatrixXd>&,
                                            std::int64_t, Sampler, std::uint64_t);

  static std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd rotation_;
  bool identity_rotation_ = true;
  // Q Λ^{1/2} / sqrt(c), column-major.
  Eigen::MatrixXd factor_;
  Eigen::VectorXd scale_;  // diagonal of factor_ when the rotation is I
  double data_bound_ = 0.0;
  Eigen::MatrixXd alpha_;
  double phi_ = 0.0;
  Sampler sampler_;
  double radius_sq_ = 0.0;
};

namespace detail {

template <class Rng>
double standard_normal(Rng& rng) {
  std::normal_distribution<double> normal;
  return normal(rng);
}

// Rademacher signs are drawn 64 per engine call.
template <class Rng>
void fill_signs(Rng& rng, std::span<double> z) {
  std::uint64_t bits = 0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (j % 64 == 0) bits = rng();
    z[j] = (bits >> (j % 64)) & 1U ? 1.0 : -1.0;
  }
}

}  // namespace detail

template <class Rng>
void SpectralModel::sample(Rng& rng, std::span<double> x) const {
  const int d = dim();
  if (std::holds_alternative<RademacherSampler>(sampler_)) {
    if (identity_rotation_) {
      std::uint64_t bits = 0;
      for (int j = 0; j < d; ++j) {
        if (j % 64 == 0) bits = rng();
        x[j] = (bits >> (j % 64)) & 1U ? scale_[j] : -scale_[j];
      }
      return;
    }
    thread_local std::vector<double> z;
    z.resize(d);
    detail::fill_signs(rng, z);
    Eigen::Map<Eigen::VectorXd>(x.data(), d).noalias() =
        factor_ * Eigen::Map<const Eigen::VectorXd>(z.data(), d);
    return;
  }
  thread_local std::vector<double> z;
  z.resize(d);
  double norm_sq;
  do {
    norm_sq = 0.0;
    for (int j = 0; j < d; ++j) {
      z[j] = detail::standard_normal(rng);
      norm_sq += z[j] * z[j];
    }
  } while (norm_sq > radius_sq_);
  Eigen::Map<Eigen::VectorXd>(x.data(), d).noalias() =
      factor_ * Eigen::Map<const Eigen::VectorXd>(z.data(), d);
}

/// Draws one data point X from the model's sampler.
template <class Rng>
void sample_data(const SpectralModel& model, Rng& rng, std::span<double> x) {
  model.sample(rng, x);
}

/// Builds Σ = QΛQᵀ from descending eigenvalues and an optional orthogonal Q
/// (identity when absent). Fourth moments are closed-form for the Rademacher
/// sampler and Monte Carlo (moment_samples draws from moment_seed) otherwise.
inline SpectralModel build_spectral_model(
    const Eigen::VectorXd& eigenvalues,
    const std::optional<Eigen::MatrixXd>& rotation = std::nullopt,
    std::int64_t moment_samples = kDefaultMomentSamples, Sampler sampler = RademacherSampler{},
    std::uint64_t moment_seed = 0) {
  const auto d = eigenvalues.size();
  if (d < 2) {
    throw Error(ErrorCode::kNonDescendingSpectrum, "need at least two eigenvalues");
  }
  if (!(eigenvalues[0] > eigenvalues[1])) {
    throw Error(ErrorCode::kNonDescendingSpectrum, "lambda_1 must exceed lambda_2");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(eigenvalues[i] > 0.0) || !std::isfinite(eigenvalues[i])) {
      throw Error(ErrorCode::kNonDescendingSpectrum,
                  "eigenvalue " + std::to_string(i + 1) + " is not positive");
    }
    if (i > 0 && eigenvalues[i] > eigenvalues[i - 1]) {
      throw Error(ErrorCode::kNonDescendingSpectrum,
                  "eigenvalues must be non-increasing (index " + std::to_string(i + 1) + ")");
    }
  }

  SpectralModel m;
  m.eigenvalues_ = eigenvalues;
  m.sampler_ = sampler;
  if (rotation) {
    if (rotation->rows() != d || rotation->cols() != d) {
      throw Error(ErrorCode::kNotOrthogonal, "rotation must be d x d");
    }
    const Eigen::MatrixXd gram = rotation->transpose() * *rotation - Eigen::MatrixXd::Identity(d, d);
    if (!(gram.cwiseAbs().maxCoeff() <= kOrthogonalityTolerance)) {
      throw Error(ErrorCode::kNotOrthogonal, "max |QᵀQ - I| exceeds 1e-10");
    }
    m.rotation_ = *rotation;
    m.identity_rotation_ = rotation->isIdentity(0.0);
  } else {
    m.rotation_ = Eigen::MatrixXd::Identity(d, d);
    m.identity_rotation_ = true;
  }

  const Eigen::VectorXd sqrt_lambda = eigenvalues.cwiseSqrt();
  double whitening = 1.0;
  if (const auto* tg = std::get_if<TruncatedGaussianSampler>(&sampler)) {
    if (!(tg->radius > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "truncation radius must be positive");
    }
    // E[z zᵀ | ‖z‖ ≤ r] = c I with c = P(χ²_{d+2} ≤ r²) / P(χ²_d ≤ r²).
    const double r2 = tg->radius * tg->radius;
    const double dd = static_cast<double>(d);
    const double c = boost::math::gamma_p(dd / 2 + 1, r2 / 2) / boost::math::gamma_p(dd / 2, r2 / 2);
    whitening = 1.0 / std::sqrt(c);
    m.radius_sq_ = r2;
    m.data_bound_ = sqrt_lambda[0] * tg->radius * whitening;
  } else {
    m.data_bound_ = std::sqrt(eigenvalues.sum());
  }
  m.scale_ = sqrt_lambda * whitening;
  m.factor_ = m.rotation_ * m.scale_.asDiagonal();

  if (std::holds_alternative<RademacherSampler>(sampler)) {
    // E[Y_i² Y_j²] = λ_i λ_j for all i, j since z_i² = 1.
    m.alpha_ = (eigenvalues * eigenvalues.transpose()).cwiseSqrt();
  } else {
    if (moment_samples < 1) {
      throw Error(ErrorCode::kInvalidArgument, "moment_samples must be positive");
    }
    Engine rng(moment_seed);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    std::vector<double> x(d), y(d);
    for (std::int64_t n = 0; n < moment_samples; ++n) {
      m.sample(rng, x);
      m.rotate(x, y);
      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) acc(i, j) += y[i] * y[i] * y[j] * y[j];
      }
    }
    m.alpha_ = (acc / static_cast<double>(moment_samples)).cwiseSqrt();
  }
  m.phi_ = m.alpha_.row(0).squaredNorm();
  return m;
}

}  // namespace asynclab
