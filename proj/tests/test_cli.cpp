#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "asynclab/cli.hpp"

using namespace asynclab;
namespace fs = std::filesystem;

namespace {

ErrorCode parse_error(const std::vector<std::string>& args, const std::string& config = "") {
  try {
    parse_spec(args, config);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "parse succeeded";
  return ErrorCode::kInvalidArgument;
}

std::string error_text(const std::vector<std::string>& args, const std::string& config = "") {
  try {
    parse_spec(args, config);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "") {
    path_ = fs::temp_directory_path() /
            ("asynclab_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + tag);
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

int run(const std::vector<std::string>& args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

TradeoffCurve tiny_curve(int taus_per_mu) {
  TradeoffCurve curve;
  curve.mus = {0.7, 0.9};
  for (int t = 0; t < taus_per_mu; ++t) curve.taus.push_back(10.0 * t);
  for (double mu : curve.mus) {
    for (double tau : curve.taus) {
      SweepCell c;
      c.mu = mu;
      c.tau = tau;
      c.completed = true;
      c.replicas = 10;
      c.mean_err = 0.01 * (1 + tau / 10) * (mu > 0.8 ? 2 : 1);
      c.std_err = 0.002;
      c.ci_half = 0.0012;
      curve.cells.push_back(c);
    }
  }
  return curve;
}

}  // namespace

TEST(ParseSpec, TradeoffGridFromFlags) {
  const auto spec = parse_spec({"sweep", "--eta", "0.0005", "--mus", "0.7,0.8,0.85,0.9,0.95", "--taus", "0:130:10",
                                "--replicas", "100"});
  EXPECT_EQ(spec.command, Command::kSweep);
  EXPECT_EQ(spec.run.eta, 0.0005);
  EXPECT_EQ(spec.grid.mus, (std::vector<double>{0.7, 0.8, 0.85, 0.9, 0.95}));
  ASSERT_EQ(spec.grid.delays.size(), 14u);
  for (int i = 0; i < 14; ++i) EXPECT_EQ(spec.grid.delays[i].mean(), 10.0 * i);
  EXPECT_EQ(spec.grid.replicas, 100);
  EXPECT_EQ(spec.run.init, (std::vector<double>{0, 1, 0, 0}));
  EXPECT_EQ(spec.run.horizon, 200000);
  EXPECT_EQ(spec.grid.base.eta, 0.0005);
}

TEST(ParseSpec, Errors) {
  EXPECT_EQ(parse_error({"simulate", "--eta", "1e-3", "--mu", "1.0"}), ErrorCode::kTypeMismatch);
  EXPECT_NE(error_text({"simulate", "--eta", "1e-3", "--mu", "1.0"}).find("mu"), std::string::npos);
  EXPECT_EQ(parse_error({"simulate", "--eta", "abc"}), ErrorCode::kTypeMismatch);
  EXPECT_NE(error_text({"simulate", "--eta", "abc"}).find("eta"), std::string::npos);
  EXPECT_EQ(parse_error({"simulate", "--etta", "1e-3"}), ErrorCode::kUnknownKey);
  EXPECT_EQ(parse_error({"simulate"}), ErrorCode::kMissingRequired);
  EXPECT_NE(error_text({"simulate"}).find("eta"), std::string::npos);
  EXPECT_EQ(parse_error({"--eta", "1e-3"}), ErrorCode::kMissingRequired);
  EXPECT_EQ(parse_error({"sweep", "--eta", "1e-3", "--taus", "0,10"}), ErrorCode::kMissingRequired);
  EXPECT_NE(error_text({"sweep", "--eta", "1e-3", "--taus", "0,10"}).find("mus"), std::string::npos);
  EXPECT_EQ(parse_error({"launch", "--eta", "1e-3"}), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({"simulate", "--eta", "1e-3", "--init", "0.6,0.6,0,0"}), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({"simulate", "--eta", "1e-3", "--init", "e9"}), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({"theory", "--eta", "0"}), ErrorCode::kTypeMismatch);
}

TEST(ParseSpec, ConfigFileAndOverrides) {
  const std::string config = R"({"command": "simulate", "eta": 0.001, "mu": 0.5, "tau": 7, "seed": 42})";
  const auto spec = parse_spec({"--mu", "0.8"}, config);
  EXPECT_EQ(spec.run.eta, 0.001);
  EXPECT_EQ(spec.run.mu, 0.8);
  EXPECT_EQ(spec.run.delay.mean(), 7.0);
  EXPECT_EQ(spec.run.seed, 42u);

  EXPECT_EQ(parse_error({}, R"({"command": "simulate", "eta": 0.001, "etaa": 1})"), ErrorCode::kUnknownKey);
  EXPECT_NE(error_text({}, R"({"command": "simulate", "eta": 0.001, "etaa": 1})").find("etaa"), std::string::npos);
  EXPECT_EQ(parse_error({}, R"({"command": "simulate", "eta": "fast"})"), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({}, R"({"command": "simulate", "eta": 0.001, "horizon": 1.5})"), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({}, R"({"command": "simulate", "eta": {"v": 1}})"), ErrorCode::kTypeMismatch);
  EXPECT_EQ(parse_error({}, "not json"), ErrorCode::kTypeMismatch);
}

TEST(ParseSpec, DashedFlagsAndConfigPath) {
  TempDir dir;
  const auto file = dir.path() / "run.json";
  std::ofstream(file) << R"({"command": "theory", "eta": 0.0005, "mu": 0.9})";
  const auto spec = parse_spec({"--config", file.string(), "--delta-scale", "3", "--moment_samples", "1000"});
  EXPECT_EQ(spec.command, Command::kTheory);
  EXPECT_EQ(spec.delta_scale, 3.0);
  EXPECT_EQ(spec.moment_samples, 1000);
  EXPECT_EQ(parse_error({"--config", (dir.path() / "missing.json").string()}), ErrorCode::kIoFailure);
}

TEST(ParseSpec, ResolvedConfigRoundTrips) {
  const auto spec = parse_spec({"sweep", "--eta", "0.001", "--mus", "0.5,0.9", "--taus", "0,5", "--replicas", "3",
                                "--delay", "poisson", "--delay-cap", "40", "--seed", "7"});
  const auto again = parse_spec({}, spec.resolved.dump());
  EXPECT_EQ(again.resolved, spec.resolved);
  EXPECT_EQ(again.grid.delays.size(), 2u);
  EXPECT_EQ(again.grid.delays[1].kind, DelayModel::Kind::kPoisson);
  EXPECT_EQ(again.run.seed, 7u);
}

TEST(RunCli, UsageAndExitCodes) {
  std::string out, err;
  EXPECT_EQ(run({}, &out, &err), 2);
  EXPECT_TRUE(out.empty());
  EXPECT_NE(err.find("usage"), std::string::npos);
  EXPECT_EQ(run({"--help"}, &out), 0);
  EXPECT_NE(out.find("simulate"), std::string::npos);
  EXPECT_EQ(run({"simulate", "--eta", "1e-3", "--mu", "1.0"}, &out, &err), 2);
  EXPECT_NE(err.find("mu"), std::string::npos);
}

TEST(RunCli, SimulateWritesOutputsReproducibly) {
  TempDir dir;
  const std::vector<std::string> args{"simulate", "--eta", "1e-3", "--mu", "0.5", "--tau", "3", "--horizon", "500",
                                      "--stride", "50", "--seed", "11", "--output", dir.str()};
  std::string out;
  ASSERT_EQ(run(args, &out), 0);
  EXPECT_NE(out.find("final_alignment="), std::string::npos);
  const auto csv = slurp(dir.path() / "trajectory.csv");
  EXPECT_EQ(csv.rfind("k,tau,a1,a2,a3,a4,norm\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  const auto svg = slurp(dir.path() / "trajectory.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);

  // The resolved config alone reproduces every file.
  TempDir other_dir_guard("_replay");
  const auto again_dir = other_dir_guard.path() / "again";
  auto resolved = nlohmann::ordered_json::parse(slurp(dir.path() / "resolved_config.json"));
  resolved["output"] = again_dir.string();
  const auto cfg = other_dir_guard.path() / "cfg.json";
  std::ofstream(cfg) << resolved.dump();
  ASSERT_EQ(run({"--config", cfg.string()}), 0);
  EXPECT_EQ(slurp(again_dir / "trajectory.csv"), csv);
  EXPECT_EQ(slurp(again_dir / "trajectory.svg"), svg);
}

TEST(RunCli, SweepDiagnoseTheoryPhases) {
  TempDir dir;
  std::string out;
  ASSERT_EQ(run({"sweep", "--eta", "1e-3", "--mus", "0.5,0.9", "--taus", "0,10", "--replicas", "3", "--horizon",
                 "2000", "--output", dir.str()},
                &out),
            0);
  const auto sweep = slurp(dir.path() / "sweep.csv");
  EXPECT_EQ(sweep.rfind("mu,tau,replicas,mean_err,std_err,diverged\n", 0), 0u);
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(dir.path() / "tradeoff.svg"));
  EXPECT_NE(out.find("tau_hat="), std::string::npos);

  ASSERT_EQ(run({"diagnose", "--eta", "1e-3", "--mu", "0.5", "--tau", "4", "--horizon", "300", "--init",
                 "0.5,0.5,0.5,0.5", "--output", dir.str()},
                &out),
            0);
  const auto diag = slurp(dir.path() / "diagnostics.csv");
  EXPECT_EQ(diag.rfind("k,err,jump,norm_excess,D1,D2,D3,D4\n", 0), 0u);
  EXPECT_EQ(std::count(diag.begin(), diag.end(), '\n'), 301);

  ASSERT_EQ(run({"theory", "--eta", "3.125e-7", "--mu", "0.9", "--output", dir.str()}, &out), 0);
  EXPECT_NE(out.find("T3_main=-0.2649158683"), std::string::npos);
  EXPECT_NE(out.find("T1_appx="), std::string::npos);
  EXPECT_NE(out.find("budget_sde="), std::string::npos);
  ASSERT_EQ(run({"theory", "--eta", "5e-4", "--mu", "0.9", "--output", dir.str()}, &out), 0);
  EXPECT_NE(out.find("T3_main=nan"), std::string::npos);

  ASSERT_EQ(run({"phases", "--eta", "5e-4", "--mu", "0.5", "--eps", "0.02", "--replicas", "4", "--horizon", "40000",
                 "--window", "0.2", "--output", dir.str()},
                &out),
            0);
  const auto phases = slurp(dir.path() / "phases.csv");
  EXPECT_EQ(phases.rfind("replica,t1,t2,t3,T1_main,T1_appx,T2,T3_main,T3_appx\n", 0), 0u);
  EXPECT_EQ(std::count(phases.begin(), phases.end(), '\n'), 5);
}

TEST(RunCli, OutputFailuresAndInterrupts) {
  TempDir dir;
  const auto blocker = dir.path() / "file";
  std::ofstream(blocker) << "x";
  // An output "directory" that is a regular file is a config error.
  EXPECT_EQ(run({"simulate", "--eta", "1e-3", "--horizon", "10", "--output", blocker.string()}), 2);
  // A data file that cannot be written is a runtime failure.
  fs::create_directories(dir.path() / "trajectory.csv");
  std::string err;
  EXPECT_EQ(run({"simulate", "--eta", "1e-3", "--horizon", "10", "--output", dir.str()}, nullptr, &err), 1);
  EXPECT_NE(err.find("IoFailure"), std::string::npos);
  std::atomic<bool> cancel{true};
  std::ostringstream o, e;
  EXPECT_EQ(run_cli({"sweep", "--eta", "1e-3", "--mus", "0.5", "--taus", "0", "--replicas", "2", "--horizon", "10",
                     "--output", dir.str()},
                    o, e, &cancel),
            1);
  EXPECT_EQ(slurp(dir.path() / "sweep.csv"), "mu,tau,replicas,mean_err,std_err,diverged\n");
}

TEST(Svg, DeterministicAndWellFormed) {
  TempDir dir;
  const auto curve = tiny_curve(4);
  const auto a = dir.path() / "a.svg";
  const auto b = dir.path() / "b.svg";
  emit_plot(curve, a.string());
  emit_plot(curve, b.string());
  const auto text = slurp(a);
  EXPECT_EQ(text, slurp(b));
  EXPECT_EQ(text.rfind("<?xml", 0), 0u);
  EXPECT_NE(text.find("</svg>\n"), std::string::npos);
  EXPECT_NE(text.find("mu=0.7"), std::string::npos);
  EXPECT_NE(text.find("mu=0.9"), std::string::npos);
  auto count = [&](const std::string& s, const std::string& what) {
    std::size_t n = 0;
    for (auto p = s.find(what); p != std::string::npos; p = s.find(what, p + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count(text, "<polyline"), 2u);
  EXPECT_EQ(count(text, "<polygon"), 2u);
  EXPECT_EQ(count(text, "<circle"), 0u);
}

TEST(Svg, SinglePointIsAMarker) {
  TradeoffCurve curve = tiny_curve(1);
  curve.mus.resize(1);
  curve.cells.resize(1);
  const auto text = render_svg(curve);
  EXPECT_EQ(text.find("<polygon"), std::string::npos);
  EXPECT_EQ(text.find("<polyline"), std::string::npos);
  EXPECT_NE(text.find("<circle"), std::string::npos);
}

TEST(Svg, Failures) {
  EXPECT_THROW(render_svg(TradeoffCurve{}), Error);
  try {
    emit_plot(tiny_curve(3), "/nonexistent-dir/x.svg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
}

TEST(Csv, FullPrecision) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(kNaN), "nan");
  EXPECT_EQ(format_double(1.0), "1");
}
