#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include "asynclab/diagnostics.hpp"
#include "asynclab/dynamics.hpp"
#include "asynclab/error.hpp"
#include "asynclab/experiments.hpp"

namespace asynclab {

/// 17 significant digits; non-finite values print as nan/inf/-inf.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_double(const std::optional<double>& v) { return v ? format_double(*v) : "nan"; }

/// k,tau,a1..ad,norm with a_i = (h_i)².
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "k,tau";
  for (int i = 1; i <= traj.dim; ++i) os << ",a" << i;
  os << ",norm\n";
  for (std::size_t r = 0; r < traj.size(); ++r) {
    os << traj.steps[r] << ',' << traj.taus[r];
    for (int i = 0; i < traj.dim; ++i) os << ',' << format_double(traj.coordinate_sq(r, i));
    os << ',' << format_double(traj.norms[r]) << '\n';
  }
}

/// k,err,jump,norm_excess,D1..Dd; D is the accumulated asynchrony error
/// after step k.
inline void write_diagnostics_csv(std::ostream& os, const DecompositionTrace& trace, const AsyncErrorTrace& async) {
  os << "k,err,jump,norm_excess";
  for (int i = 1; i <= trace.dim; ++i) os << ",D" << i;
  os << '\n';
  for (std::size_t k = 0; k < trace.size(); ++k) {
    os << trace.steps[k] << ',' << format_double(trace.err[k]) << ',' << format_double(trace.jump[k]) << ','
       << format_double(trace.norm_excess[k]);
    const auto d = async.at(k + 1);
    for (double x : d) os << ',' << format_double(x);
    os << '\n';
  }
}

/// mu,tau,replicas,mean_err,std_err,diverged; incomplete cells are skipped.
inline void write_sweep_csv(std::ostream& os, const TradeoffCurve& curve) {
  os << "mu,tau,replicas,mean_err,std_err,diverged\n";
  for (const auto& c : curve.cells) {
    if (!c.completed) continue;
    os << format_double(c.mu) << ',' << format_double(c.tau) << ',' << c.replicas << ','
       << format_double(c.mean_err) << ',' << format_double(c.std_err) << ',' << c.diverged << '\n';
  }
}

inline void write_phase_csv(std::ostream& os, const PhaseReport& rep) {
  os << "replica,t1,t2,t3,T1_main,T1_appx,T2,T3_main,T3_appx\n";
  for (std::size_t r = 0; r < rep.replicas.size(); ++r) {
    const auto& t = rep.replicas[r].times;
    os << r << ',' << format_double(t.t1) << ',' << format_double(t.t2) << ',' << format_double(t.t3) << ','
       << format_double(rep.T1_main) << ',' << format_double(rep.T1_appx) << ',' << format_double(rep.T2) << ','
       << format_double(rep.T3_main) << ',' << format_double(rep.T3_appx) << '\n';
  }
}

template <class Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoFailure, "cannot open " + path);
  writer(os);
  os.flush();
  if (!os) throw Error(ErrorCode::kIoFailure, "write failed: " + path);
}

}  // namespace asynclab
