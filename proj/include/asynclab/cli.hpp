#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <json.hpp>

#include "asynclab/csv.hpp"
#include "asynclab/delay.hpp"
#include "asynclab/diagnostics.hpp"
#include "asynclab/dynamics.hpp"
#include "asynclab/error.hpp"
#include "asynclab/experiments.hpp"
#include "asynclab/random.hpp"
#include "asynclab/run_config.hpp"
#include "asynclab/spectral_model.hpp"
#include "asynclab/svg.hpp"
#include "asynclab/theory.hpp"

namespace asynclab {

enum class Command { kSimulate, kSweep, kPhases, kDiagnose, kTheory };

/// A fully resolved command line. `resolved` holds every key with its final
/// value and can be fed back as a config file to reproduce the run.
struct ExperimentSpec {
  Command command = Command::kSimulate;
  std::string output = ".";
  std::vector<double> eigenvalues{4, 3, 2, 1};
  std::optional<std::uint64_t> rotation_seed;
  Sampler sampler = RademacherSampler{};
  std::int64_t moment_samples = kDefaultMomentSamples;

  RunConfig run;
  SweepGrid grid;
  int replicas = 100;

  double eps = 1e-3;
  double nu = 0.5;
  double gamma = 0.5;
  double delta_scale = 1.0;
  double window = 1.0;
  double c_tau = 1.0;
  int threads = 0;
  bool plot = true;

  nlohmann::ordered_json resolved;
};

namespace cli {

enum class Type { kString, kInt, kUnsigned, kDouble, kBool, kDoubleList, kIntList, kInit, kOptionalUnsigned };

struct Key {
  const char* name;
  Type type;
  const char* help;
};

// Order here is the order of the resolved config.
inline const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"command", Type::kString, "simulate | sweep | phases | diagnose | theory"},
      {"output", Type::kString, "output directory (default .)"},
      {"eigenvalues", Type::kDoubleList, "covariance spectrum, descending (default 4,3,2,1)"},
      {"rotation_seed", Type::kOptionalUnsigned, "seed of a random orthogonal eigenbasis (default identity)"},
      {"sampler", Type::kString, "rademacher | truncated_gaussian"},
      {"radius", Type::kDouble, "truncation radius of the Gaussian sampler (default 3)"},
      {"moment_samples", Type::kInt, "Monte Carlo draws for fourth moments (default 1e6)"},
      {"eta", Type::kDouble, "step size (required)"},
      {"mu", Type::kDouble, "momentum in [0,1) (default 0)"},
      {"mus", Type::kDoubleList, "sweep momenta, comma separated"},
      {"delay", Type::kString, "fixed | uniform | geometric | poisson"},
      {"tau", Type::kDouble, "delay parameter: value, bound or mean (default 0)"},
      {"taus", Type::kIntList, "sweep delays: list or a:b:step (inclusive)"},
      {"delay_cap", Type::kOptionalUnsigned, "cap for unbounded delay models"},
      {"horizon", Type::kInt, "steps per run (default 200000)"},
      {"seed", Type::kUnsigned, "top-level seed (default 0)"},
      {"init", Type::kInit, "eK for the K-th eigenvector or a unit vector (default e2)"},
      {"stride", Type::kInt, "recording stride (default 100)"},
      {"divergence_limit", Type::kDouble, "stop once |v|^2 - 1 exceeds this (default 1)"},
      {"replicas", Type::kInt, "replicas per cell (default 100)"},
      {"rho", Type::kDouble, "optimal-delay tolerance (default 1)"},
      {"metric", Type::kString, "final_error_mean | alignment_threshold"},
      {"alignment_threshold", Type::kDouble, "success level for the threshold metric (default 0.99)"},
      {"eps", Type::kDouble, "phase III residual level (default 1e-3)"},
      {"nu", Type::kDouble, "phase I failure probability (default 0.5)"},
      {"gamma", Type::kDouble, "budget exponent (default 0.5)"},
      {"delta_scale", Type::kDouble, "delta = delta_scale * sqrt(eta) (default 1)"},
      {"window", Type::kDouble, "phase III sustain window in time units (default 1)"},
      {"c_tau", Type::kDouble, "delay-budget constant (default 1)"},
      {"threads", Type::kInt, "worker threads, 0 for ASYNC_LAB_THREADS or all cores"},
      {"plot", Type::kBool, "write SVG plots (default true)"},
  };
  return table;
}

inline const Key* find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

[[noreturn]] inline void mismatch(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::kTypeMismatch, key + ": " + what);
}

template <class T>
T parse_number(const std::string& key, std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) mismatch(key, "cannot parse '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline nlohmann::ordered_json parse_int_list(const std::string& key, const std::string& s) {
  auto out = nlohmann::ordered_json::array();
  const auto parts = split(s, ':');
  if (parts.size() == 3) {
    const auto a = parse_number<std::int64_t>(key, parts[0]);
    const auto b = parse_number<std::int64_t>(key, parts[1]);
    const auto step = parse_number<std::int64_t>(key, parts[2]);
    if (step <= 0 || b < a) mismatch(key, "range needs a <= b and step > 0");
    for (auto v = a; v <= b; v += step) out.push_back(v);
    return out;
  }
  if (parts.size() != 1) mismatch(key, "expected a list or a:b:step");
  for (const auto& p : split(s, ',')) out.push_back(parse_number<std::int64_t>(key, p));
  return out;
}

/// Flag text → JSON value of the key's type.
inline nlohmann::ordered_json from_text(const Key& key, const std::string& s) {
  const std::string name = key.name;
  switch (key.type) {
    case Type::kString: return s;
    case Type::kInt: return parse_number<std::int64_t>(name, s);
    case Type::kUnsigned: return parse_number<std::uint64_t>(name, s);
    case Type::kOptionalUnsigned:
      if (s == "none" || s.empty()) return nullptr;
      return parse_number<std::uint64_t>(name, s);
    case Type::kDouble: return parse_number<double>(name, s);
    case Type::kBool:
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      mismatch(name, "expected true or false");
    case Type::kDoubleList: {
      auto out = nlohmann::ordered_json::array();
      for (const auto& p : split(s, ',')) out.push_back(parse_number<double>(name, p));
      return out;
    }
    case Type::kIntList: return parse_int_list(name, s);
    case Type::kInit:
      if (!s.empty() && s[0] == 'e') return s;
      return from_text(Key{key.name, Type::kDoubleList, key.help}, s);
  }
  return nullptr;
}

/// Config-file value → JSON value of the key's type (strings are accepted
/// wherever the flag syntax is).
inline nlohmann::ordered_json from_json(const Key& key, const nlohmann::ordered_json& v) {
  const std::string name = key.name;
  if (v.is_string() && key.type != Type::kString) return from_text(key, v.get<std::string>());
  auto numbers = [&](bool integral) {
    if (!v.is_array()) mismatch(name, "expected a list");
    for (const auto& x : v) {
      if (integral ? !x.is_number_integer() : !x.is_number()) {
        mismatch(name, integral ? "expected integers" : "expected numbers");
      }
    }
    return v;
  };
  switch (key.type) {
    case Type::kString:
      if (!v.is_string()) mismatch(name, "expected a string");
      return v;
    case Type::kInt:
      if (!v.is_number_integer()) mismatch(name, "expected an integer");
      return v;
    case Type::kOptionalUnsigned:
      if (v.is_null()) return v;
      [[fallthrough]];
    case Type::kUnsigned:
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        mismatch(name, "expected a non-negative integer");
      }
      return v.get<std::uint64_t>();
    case Type::kDouble:
      if (!v.is_number()) mismatch(name, "expected a number");
      return v;
    case Type::kBool:
      if (!v.is_boolean()) mismatch(name, "expected true or false");
      return v;
    case Type::kDoubleList:
    case Type::kInit: return numbers(false);
    case Type::kIntList: return numbers(true);
  }
  return v;
}

inline std::string usage() {
  std::ostringstream os;
  os << "usage: async_lab <command> [--config file.json] [--key value ...]\n"
        "commands: simulate, sweep, phases, diagnose, theory\n"
        "keys (flags override the config file):\n";
  for (const auto& k : keys()) {
    if (std::string_view(k.name) == "command") continue;
    os << "  --" << k.name << "  " << k.help << '\n';
  }
  return os.str();
}

inline Eigen::MatrixXd random_rotation(int d, std::uint64_t seed) {
  Engine rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(d, d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace cli

inline SpectralModel build_model(const ExperimentSpec& spec) {
  const Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(spec.eigenvalues.data(), spec.eigenvalues.size());
  std::optional<Eigen::MatrixXd> q;
  if (spec.rotation_seed) q = cli::random_rotation(static_cast<int>(lambda.size()), *spec.rotation_seed);
  return build_spectral_model(lambda, q, spec.moment_samples, spec.sampler, spec.run.seed);
}

/// Parses `command [--key value ...]` on top of a flat JSON config. When
/// config_text is empty and --config is given, the file is read. Throws
/// Error with UnknownKey, TypeMismatch or MissingRequired naming the key.
inline ExperimentSpec parse_spec(const std::vector<std::string>& args, std::string config_text = "") {
  using nlohmann::ordered_json;
  CLI::App app{"async_lab"};
  app.set_help_flag();
  std::string command, config_path;
  app.add_option("verb", command);
  app.add_option("--config", config_path);
  std::vector<std::pair<const cli::Key*, std::string>> flag_values;
  std::vector<std::string> storage(cli::keys().size());
  for (std::size_t i = 0; i < cli::keys().size(); ++i) {
    const auto& k = cli::keys()[i];
    std::string names = std::string("--") + k.name;
    const std::string dashed = [&] {
      std::string s = k.name;
      for (auto& c : s) c = c == '_' ? '-' : c;
      return s;
    }();
    if (dashed != k.name) names += ",--" + dashed;
    app.add_option(names, storage[i])->allow_extra_args(false);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ExtrasError& e) {
    throw Error(ErrorCode::kUnknownKey, std::string("unrecognized argument: ") + e.what());
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::kTypeMismatch, e.what());
  }

  ordered_json values = ordered_json::object();
  if (config_text.empty() && !config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw Error(ErrorCode::kIoFailure, "cannot read config " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    config_text = ss.str();
  }
  if (!config_text.empty()) {
    ordered_json doc;
    try {
      doc = ordered_json::parse(config_text);
    } catch (const ordered_json::parse_error& e) {
      throw Error(ErrorCode::kTypeMismatch, std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::kTypeMismatch, "config must be a flat object");
    for (const auto& [name, v] : doc.items()) {
      const auto* key = cli::find_key(name);
      if (!key) throw Error(ErrorCode::kUnknownKey, name);
      if (v.is_object()) cli::mismatch(name, "nested objects are not allowed");
      values[name] = cli::from_json(*key, v);
    }
  }
  if (!command.empty()) values["command"] = command;
  for (std::size_t i = 0; i < cli::keys().size(); ++i) {
    const auto& k = cli::keys()[i];
    if (app.get_option(std::string("--") + k.name)->count() > 0) values[k.name] = cli::from_text(k, storage[i]);
  }

  ExperimentSpec spec;
  auto has = [&](const char* k) { return values.contains(k); };
  auto get = [&](const char* k) -> const ordered_json& { return values.at(k); };
  auto number = [&](const char* k, double fallback) { return has(k) ? get(k).get<double>() : fallback; };
  auto integer = [&](const char* k, std::int64_t fallback) { return has(k) ? get(k).get<std::int64_t>() : fallback; };
  auto require = [&](bool ok, const char* k, const std::string& what) {
    if (!ok) cli::mismatch(k, what);
  };

  if (!has("command")) throw Error(ErrorCode::kMissingRequired, "command");
  const std::string cmd = get("command").get<std::string>();
  if (cmd == "simulate") spec.command = Command::kSimulate;
  else if (cmd == "sweep") spec.command = Command::kSweep;
  else if (cmd == "phases") spec.command = Command::kPhases;
  else if (cmd == "diagnose") spec.command = Command::kDiagnose;
  else if (cmd == "theory") spec.command = Command::kTheory;
  else cli::mismatch("command", "unknown command '" + cmd + "'");

  if (has("output")) spec.output = get("output").get<std::string>();
  if (has("eigenvalues")) spec.eigenvalues = get("eigenvalues").get<std::vector<double>>();
  if (has("rotation_seed") && !get("rotation_seed").is_null()) spec.rotation_seed = get("rotation_seed").get<std::uint64_t>();
  const std::string sampler = has("sampler") ? get("sampler").get<std::string>() : "rademacher";
  const double radius = number("radius", 3.0);
  if (sampler == "truncated_gaussian") {
    require(radius > 0, "radius", "must be positive");
    spec.sampler = TruncatedGaussianSampler{radius};
  } else {
    require(sampler == "rademacher", "sampler", "expected rademacher or truncated_gaussian");
  }
  spec.moment_samples = integer("moment_samples", kDefaultMomentSamples);
  require(spec.moment_samples >= 1, "moment_samples", "must be >= 1");

  if (!has("eta")) throw Error(ErrorCode::kMissingRequired, "eta");
  spec.run.eta = get("eta").get<double>();
  require(spec.run.eta >= 0 && std::isfinite(spec.run.eta), "eta", "must be finite and >= 0");
  spec.run.mu = number("mu", 0.0);
  require(spec.run.mu >= 0 && spec.run.mu < 1, "mu", "must lie in [0, 1)");

  const std::string delay = has("delay") ? get("delay").get<std::string>() : "fixed";
  const double tau = number("tau", 0.0);
  std::optional<int> cap;
  if (has("delay_cap") && !get("delay_cap").is_null()) cap = static_cast<int>(get("delay_cap").get<std::uint64_t>());
  auto make_delay = [&](double t) {
    const bool integral = t >= 0 && t == std::floor(t);
    if (delay == "fixed" || delay == "uniform") {
      require(integral, "tau", "must be a non-negative integer for " + delay + " delays");
      return delay == "fixed" ? DelayModel::fixed(int(t)) : DelayModel::uniform_bounded(int(t));
    }
    require(t >= 0, "tau", "must be >= 0");
    if (delay == "geometric") return DelayModel::geometric(t, cap);
    require(delay == "poisson", "delay", "expected fixed, uniform, geometric or poisson");
    return DelayModel::poisson(t, cap);
  };
  spec.run.delay = make_delay(tau);
  spec.run.horizon = integer("horizon", 200000);
  require(spec.run.horizon >= 0, "horizon", "must be >= 0");
  spec.run.seed = has("seed") ? get("seed").get<std::uint64_t>() : 0;
  spec.run.stride = integer("stride", 100);
  require(spec.run.stride >= 1, "stride", "must be >= 1");
  spec.run.divergence_limit = number("divergence_limit", 1.0);
  require(spec.run.divergence_limit > 0, "divergence_limit", "must be positive");

  const int d = static_cast<int>(spec.eigenvalues.size());
  require(d >= 2, "eigenvalues", "need at least two");
  ordered_json init = has("init") ? get("init") : ordered_json("e2");
  std::vector<double> init_vec;
  if (init.is_string()) {
    const std::string s = init.get<std::string>();
    const int i = cli::parse_number<int>("init", std::string_view(s).substr(1));
    require(i >= 1 && i <= d, "init", "eigenvector index out of range");
    const Eigen::VectorXd e = spec.rotation_seed ? Eigen::VectorXd(cli::random_rotation(d, *spec.rotation_seed).col(i - 1))
                                                 : Eigen::VectorXd(Eigen::VectorXd::Unit(d, i - 1));
    init_vec.assign(e.data(), e.data() + d);
  } else {
    init_vec = init.get<std::vector<double>>();
    require(static_cast<int>(init_vec.size()) == d, "init", "length must match eigenvalues");
  }
  spec.run.init = init_vec;
  double n2 = 0.0;
  for (double x : init_vec) n2 += x * x;
  require(std::abs(std::sqrt(n2) - 1.0) <= kUnitNormTolerance, "init", "must have unit norm");

  spec.replicas = static_cast<int>(integer("replicas", 100));
  require(spec.replicas >= 1, "replicas", "must be >= 1");
  spec.eps = number("eps", 1e-3);
  require(spec.eps > 0, "eps", "must be positive");
  spec.nu = number("nu", 0.5);
  require(spec.nu > 0 && spec.nu < 1, "nu", "must lie in (0, 1)");
  spec.gamma = number("gamma", 0.5);
  spec.delta_scale = number("delta_scale", 1.0);
  require(spec.delta_scale > 0, "delta_scale", "must be positive");
  spec.window = number("window", 1.0);
  require(spec.window >= 0, "window", "must be >= 0");
  spec.c_tau = number("c_tau", 1.0);
  require(spec.c_tau > 0, "c_tau", "must be positive");
  spec.threads = static_cast<int>(integer("threads", 0));
  require(spec.threads >= 0, "threads", "must be >= 0");
  spec.plot = has("plot") ? get("plot").get<bool>() : true;

  spec.grid.base = spec.run;
  spec.grid.replicas = spec.replicas;
  spec.grid.rho = number("rho", 1.0);
  require(spec.grid.rho >= 0, "rho", "must be >= 0");
  const std::string metric = has("metric") ? get("metric").get<std::string>() : "final_error_mean";
  if (metric == "alignment_threshold") spec.grid.metric = SuccessMetric::kAlignmentThreshold;
  else require(metric == "final_error_mean", "metric", "expected final_error_mean or alignment_threshold");
  spec.grid.alignment_threshold = number("alignment_threshold", 0.99);
  require(spec.grid.alignment_threshold > 0 && spec.grid.alignment_threshold <= 1, "alignment_threshold",
          "must lie in (0, 1]");
  if (spec.command == Command::kSweep) {
    if (!has("mus")) throw Error(ErrorCode::kMissingRequired, "mus");
    if (!has("taus")) throw Error(ErrorCode::kMissingRequired, "taus");
    require(spec.replicas >= 2, "replicas", "a sweep needs at least 2");
  }
  if (has("mus")) {
    spec.grid.mus = get("mus").get<std::vector<double>>();
    require(!spec.grid.mus.empty() || spec.command != Command::kSweep, "mus", "must not be empty");
    for (double mu : spec.grid.mus) require(mu >= 0 && mu < 1, "mus", "each must lie in [0, 1)");
  }
  if (has("taus")) {
    for (auto t : get("taus").get<std::vector<std::int64_t>>()) {
      require(t >= 0, "taus", "must be >= 0");
      spec.grid.delays.push_back(make_delay(static_cast<double>(t)));
    }
    require(!spec.grid.delays.empty() || spec.command != Command::kSweep, "taus", "must not be empty");
  }
  if (spec.command != Command::kSimulate && spec.command != Command::kSweep) {
    require(spec.run.eta > 0, "eta", "must be positive for this command");
  }

  // Echo of every key with its final value.
  auto& r = spec.resolved;
  r["command"] = cmd;
  r["output"] = spec.output;
  r["eigenvalues"] = spec.eigenvalues;
  r["rotation_seed"] = spec.rotation_seed ? ordered_json(*spec.rotation_seed) : ordered_json(nullptr);
  r["sampler"] = sampler;
  r["radius"] = radius;
  r["moment_samples"] = spec.moment_samples;
  r["eta"] = spec.run.eta;
  r["mu"] = spec.run.mu;
  r["mus"] = spec.grid.mus;
  r["delay"] = delay;
  r["tau"] = tau;
  auto taus = ordered_json::array();
  for (const auto& dm : spec.grid.delays) taus.push_back(static_cast<std::int64_t>(dm.parameter));
  r["taus"] = taus;
  r["delay_cap"] = cap ? ordered_json(*cap) : ordered_json(nullptr);
  r["horizon"] = spec.run.horizon;
  r["seed"] = spec.run.seed;
  r["init"] = spec.run.init;
  r["stride"] = spec.run.stride;
  r["divergence_limit"] = spec.run.divergence_limit;
  r["replicas"] = spec.replicas;
  r["rho"] = spec.grid.rho;
  r["metric"] = metric;
  r["alignment_threshold"] = spec.grid.alignment_threshold;
  r["eps"] = spec.eps;
  r["nu"] = spec.nu;
  r["gamma"] = spec.gamma;
  r["delta_scale"] = spec.delta_scale;
  r["window"] = spec.window;
  r["c_tau"] = spec.c_tau;
  r["threads"] = spec.threads;
  r["plot"] = spec.plot;
  return spec;
}

namespace cli {

inline void print_value(std::ostream& out, const std::string& key, double v) {
  out << key << '=' << format_double(v) << '\n';
}

inline ExecutionOptions execution(const ExperimentSpec& spec, std::ostream& err, const std::atomic<bool>* cancel,
                                  const char* label) {
  ExecutionOptions opts;
  opts.threads = spec.threads;
  opts.cancel = cancel;
  opts.progress = [&err, label, last = std::int64_t(-1)](std::int64_t done, std::int64_t total) mutable {
    const std::int64_t pct = done * 100 / total;
    if (pct == last) return;
    last = pct;
    err << label << ": " << done << '/' << total << " (" << pct << "%)\n";
    err.flush();
  };
  return opts;
}

inline std::string path_in(const ExperimentSpec& spec, const char* name) {
  return (std::filesystem::path(spec.output) / name).string();
}

inline int simulate(const ExperimentSpec& spec, std::ostream& out) {
  const SpectralModel model = build_model(spec);
  const Trajectory traj = run_trajectory(model, spec.run);
  write_file(path_in(spec, "trajectory.csv"), [&](std::ostream& os) { write_trajectory_csv(os, traj); });
  if (spec.plot) emit_plot(traj, path_in(spec, "trajectory.svg"));
  out << "steps=" << traj.steps_run << "\ndiverged=" << (traj.diverged ? "true" : "false") << '\n';
  print_value(out, "final_alignment", traj.final_alignment());
  print_value(out, "final_error", traj.final_error());
  print_value(out, "mean_delay", traj.mean_delay());
  print_value(out, "max_jump_ratio", traj.jump_bound > 0 ? traj.max_jump / traj.jump_bound : 0.0);
  print_value(out, "max_norm_sq", traj.max_norm_sq);
  return 0;
}

inline int sweep(const ExperimentSpec& spec, std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  const SpectralModel model = build_model(spec);
  const TradeoffCurve curve = run_sweep(spec.grid, model, execution(spec, err, cancel, "sweep"));
  write_file(path_in(spec, "sweep.csv"), [&](std::ostream& os) { write_sweep_csv(os, curve); });
  bool any = false;
  for (const auto& c : curve.cells) any = any || c.completed;
  if (spec.plot && any) emit_plot(curve, path_in(spec, "tradeoff.svg"));
  for (std::size_t m = 0; m < curve.mus.size(); ++m) {
    out << "mu=" << format_double(curve.mus[m]) << " tau_hat="
        << (curve.optimal[m] ? format_double(*curve.optimal[m]) : std::string("none")) << '\n';
  }
  if (curve.cancelled) {
    err << "sweep interrupted; completed cells were written\n";
    return 1;
  }
  return 0;
}

inline PhaseParams phase_params(const ExperimentSpec& spec, const SpectralModel& model) {
  return PhaseParams::make(model, spec.run.mu, spec.run.eta, spec.eps, spec.nu, spec.gamma, spec.delta_scale);
}

inline void print_proportion(std::ostream& out, const std::string& key, const std::optional<Proportion>& p) {
  if (!p) {
    out << key << "=nan\n";
    return;
  }
  out << key << '=' << format_double(p->estimate) << " [" << format_double(p->lower) << ", "
      << format_double(p->upper) << "] (" << p->successes << '/' << p->trials << ")\n";
}

inline int phases(const ExperimentSpec& spec, std::ostream& out, std::ostream& err, const std::atomic<bool>* cancel) {
  const SpectralModel model = build_model(spec);
  const PhaseParams p = phase_params(spec, model);
  const PhaseReport rep = phase_report(model, spec.run, p, spec.replicas, spec.window, execution(spec, err, cancel, "phases"));
  if (cancel && cancel->load()) {
    err << "phases interrupted; nothing written\n";
    return 1;
  }
  write_file(path_in(spec, "phases.csv"), [&](std::ostream& os) { write_phase_csv(os, rep); });
  for (auto [k, v] : {std::pair{"T1_main", rep.T1_main}, {"T1_appx", rep.T1_appx}, {"T2", rep.T2},
                      {"T3_main", rep.T3_main}, {"T3_appx", rep.T3_appx}}) {
    print_value(out, k, v);
  }
  print_proportion(out, "P(t1<=T1_main)", rep.escape_main);
  print_proportion(out, "P(t1<=T1_appx)", rep.escape_appx);
  print_proportion(out, "P(t2<=T2)", rep.traverse);
  print_proportion(out, "P(residual<=eps)_main", rep.converge_main);
  print_proportion(out, "P(residual<=eps)_appx", rep.converge_appx);
  return 0;
}

inline int diagnose(const ExperimentSpec& spec, std::ostream& out) {
  const SpectralModel model = build_model(spec);
  RunConfig config = spec.run;
  config.stride = 1;
  const Trajectory traj = run_trajectory(model, config);
  const DecompositionTrace trace = decompose(traj, model);
  const AsyncErrorTrace async = async_error(traj, model);
  write_file(path_in(spec, "diagnostics.csv"), [&](std::ostream& os) { write_diagnostics_csv(os, trace, async); });
  double rec = 0.0;
  for (double r : trace.reconstruction) rec = std::max(rec, r);
  const MomentumErrorProfile prof = momentum_error_profile(trace, model);
  print_value(out, "max_reconstruction", rec);
  out << "burn_in=" << prof.burn_in << '\n';
  print_value(out, "max_momentum_err", prof.max_err);
  print_value(out, "momentum_err_bound", prof.bound);
  out << "momentum_err_exceeded=" << (prof.exceeded ? "true" : "false") << '\n';
  print_value(out, "sup_abs_D", async.sup_norm());
  print_value(out, "max_increment", async.max_increment);
  print_value(out, "increment_scale", async_increment_scale(model, config.mu, config.eta, traj.max_delay));
  return 0;
}

inline int theory(const ExperimentSpec& spec, std::ostream& out) {
  const SpectralModel model = build_model(spec);
  const PhaseParams p = phase_params(spec, model);
  auto guarded = [](auto&& fn) {
    try {
      return fn();
    } catch (const Error&) {
      return kNaN;
    }
  };
  using V = ConstantVariant;
  print_value(out, "T1_main", phase1_time(p, V::kMainText));
  print_value(out, "T1_appx", phase1_time(p, V::kAppendix));
  print_value(out, "T2", phase2_time(p));
  print_value(out, "T3_main", guarded([&] { return phase3_time(p, V::kMainText); }));
  print_value(out, "T3_appx", guarded([&] { return phase3_time(p, V::kAppendix); }));
  print_value(out, "budget_ode", guarded([&] { return delay_budget(p.mu, p.eta, p.gamma, model, Regime::kOde, spec.c_tau); }));
  print_value(out, "budget_sde", guarded([&] { return delay_budget(p.mu, p.eta, p.gamma, model, Regime::kSde, spec.c_tau); }));
  const double tau = std::max(1.0, spec.run.delay.mean());
  for (int phase = 1; phase <= 3; ++phase) {
    const std::string n = "N" + std::to_string(phase);
    print_value(out, n + "_main", guarded([&] { return effective_complexity(phase, p, tau, V::kMainText); }));
    print_value(out, n + "_appx", guarded([&] { return effective_complexity(phase, p, tau, V::kAppendix); }));
  }
  print_value(out, "stationary_residual", stationary_residual(model, p.mu, p.eta));
  print_value(out, "norm_bound_exponent", norm_bound_exponent(p.mu, p.eta, spec.run.delay.mean()));
  return 0;
}

}  // namespace cli

/// Entry point shared by the executable and the tests. Exit codes: 0 when
/// every output was written, 2 for usage or config errors, 1 for runtime
/// failures and interrupted runs.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   const std::atomic<bool>* cancel = nullptr) {
  if (args.empty()) {
    err << cli::usage();
    return 2;
  }
  for (const auto& a : args) {
    if (a == "--help" || a == "-h") {
      out << cli::usage();
      return 0;
    }
  }
  ExperimentSpec spec;
  try {
    spec = parse_spec(args);
    std::filesystem::create_directories(spec.output);
    write_file(cli::path_in(spec, "resolved_config.json"),
               [&](std::ostream& os) { os << spec.resolved.dump(2) << '\n'; });
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n(run with --help for usage)\n";
    return 2;
  }
  try {
    switch (spec.command) {
      case Command::kSimulate: return cli::simulate(spec, out);
      case Command::kSweep: return cli::sweep(spec, out, err, cancel);
      case Command::kPhases: return cli::phases(spec, out, err, cancel);
      case Command::kDiagnose: return cli::diagnose(spec, out);
      case Command::kTheory: return cli::theory(spec, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace asynclab
