#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "asynclab/delay.hpp"
#include "asynclab/error.hpp"

namespace asynclab {

inline constexpr double kUnitNormTolerance = 1e-12;

struct RunConfig {
  double eta = 5e-4;
  double mu = 0.0;
  DelayModel delay = DelayModel::fixed(0);
  std::int64_t horizon = 0;
  std::uint64_t seed = 0;
  std::vector<double> init;
  /// Record every `stride` steps; the final step is always recorded.
  std::int64_t stride = 100;
  /// A run stops as diverged once ‖v_k‖² − 1 exceeds this or turns non-finite.
  double divergence_limit = 1.0;

  /// η = 0 is accepted as the degenerate frozen run.
  void validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error(ErrorCode::kInvalidArgument, "eta must be >= 0");
    if (!(mu >= 0.0 && mu < 1.0)) throw Error(ErrorCode::kInvalidArgument, "mu must lie in [0, 1)");
    if (horizon < 0) throw Error(ErrorCode::kInvalidArgument, "horizon must be >= 0");
    if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "stride must be >= 1");
    if (init.empty()) throw Error(ErrorCode::kInvalidArgument, "init is empty");
    double n2 = 0.0;
    for (double x : init) n2 += x * x;
    if (!(std::abs(std::sqrt(n2) - 1.0) <= kUnitNormTolerance)) {
      throw Error(ErrorCode::kInvalidArgument, "init must lie on the unit sphere");
    }
  }
};

/// e_i in R^d (0-based).
inline std::vector<double> basis_vector(int d, int i) {
  std::vector<double> e(d, 0.0);
  e.at(i) = 1.0;
  return e;
}

}  // namespace asynclab
