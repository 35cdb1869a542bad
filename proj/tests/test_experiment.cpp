#include "slc/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "slc/svg.hpp"

namespace fs = std::filesystem;

namespace slc {
namespace {

std::string experiments_dir() {
  const char* d = std::getenv("SLC_EXPERIMENTS_DIR");
  return d ? d : "experiments";
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("slc-test-" + std::to_string(::getpid()) + "-" + name);
  fs::remove_all(p);
  return p;
}

constexpr const char* kMinimal = R"({
  // a = 2 plant behind a unit-noise linear sensor
  "system": {"A": 2.0, "B": 1.0},
  "channel": {"kind": "linear-gaussian", "params": {"C": 1, "R": 1}},
  "prior": {"family": "gaussian", "params": {"mean": [0], "cov": 1}},
  "controller": {"gain": {"method": "manual", "K": -1.5}}
})";

std::string expect_error(const std::string& text, ErrorCode code) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
    return e.what();
  }
  ADD_FAILURE() << "no error for " << text;
  return {};
}

TEST(Config, MinimalDefaults) {
  const ExperimentConfig cfg = parse_config(kMinimal);
  EXPECT_EQ(cfg.horizon, 100);
  EXPECT_EQ(cfg.runs, 100);
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.tail_window, 20);
  EXPECT_EQ(cfg.filter.kind, FilterKind::kKalman);
  EXPECT_EQ(cfg.timing, TimingMode::kPredict);
  const LoopConfig loop = build_loop(cfg);
  EXPECT_DOUBLE_EQ(loop.K(0, 0), -1.5);
  EXPECT_NEAR(loop.decomp.r_exp, 1.0, 1e-12);
}

TEST(Config, DefaultFilterFollowsModel) {
  std::string tanh = kMinimal;
  tanh.replace(tanh.find("linear-gaussian"), 15, "tanh-gaussian");
  EXPECT_EQ(parse_config(tanh).filter.kind, FilterKind::kGrid);
  std::string bad = tanh;
  bad.replace(bad.find("\"controller\""), 0, "\"filter\": {\"kind\": \"kalman\"},\n");
  expect_error(bad, ErrorCode::kValidationError);
}

TEST(Config, UnknownChannelKindNamesField) {
  std::string text = kMinimal;
  text.replace(text.find("linear-gaussian"), 15, "lidar");
  const std::string msg = expect_error(text, ErrorCode::kValidationError);
  EXPECT_NE(msg.find("channel.kind"), std::string::npos) << msg;
  EXPECT_NE(msg.find("lidar"), std::string::npos) << msg;
}

TEST(Config, ScheduleNeedsExtensionFlag) {
  std::string text = kMinimal;
  text.replace(text.find("\"R\": 1}"), 7, "\"R\": 1}, \"schedule\": {\"noise_decay\": 0.5}");
  const std::string msg = expect_error(text, ErrorCode::kValidationError);
  EXPECT_NE(msg.find("channel.schedule"), std::string::npos) << msg;
  EXPECT_NE(msg.find("extensions.time_varying_channel"), std::string::npos);
  text.replace(text.find("\"controller\""), 0, "\"extensions\": {\"time_varying_channel\": true},\n");
  const ExperimentConfig cfg = parse_config(text);
  ASSERT_TRUE(cfg.channel.noise_decay.has_value());
  EXPECT_DOUBLE_EQ(*cfg.channel.noise_decay, 0.5);
}

TEST(Config, ParseErrorReportsLine) {
  const std::string msg = expect_error("{\n  \"horizon\": 10,\n  \"runs\": ,\n}", ErrorCode::kParseError);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyReportsPath) {
  std::string text = kMinimal;
  text.replace(text.find("\"cov\""), 0, "\"covariance\": 1, ");
  const std::string msg = expect_error(text, ErrorCode::kValidationError);
  EXPECT_NE(msg.find("prior.params.covariance"), std::string::npos) << msg;
}

TEST(Config, ParameterOverride) {
  const ExperimentConfig cfg = with_parameter(parse_config(kMinimal), "/system/A", 3.0);
  EXPECT_NEAR(build_loop(cfg).decomp.r_exp, std::log2(3.0), 1e-12);
  Overrides o;
  o.seed = 42;
  o.horizon = 30;
  const ExperimentConfig c2 = apply_overrides(cfg, o);
  EXPECT_EQ(c2.seed, 42u);
  EXPECT_EQ(c2.horizon, 30);
  EXPECT_EQ(c2.runs, 100);
}

TEST(Config, BundledExperimentsParse) {
  int count = 0;
  for (const auto& entry : fs::directory_iterator(experiments_dir())) {
    if (entry.path().extension() != ".json") continue;
    ++count;
    EXPECT_NO_THROW(build_loop(load_config(entry.path().string()))) << entry.path();
  }
  EXPECT_GE(count, 9);
}

TEST(Config, MissingFileIsIoError) {
  try {
    load_config("/nonexistent/x.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

ExperimentConfig bundled(const std::string& name, int runs, std::optional<int> horizon = {}) {
  Overrides o;
  o.runs = runs;
  o.horizon = horizon;
  return apply_overrides(load_config(experiments_dir() + "/" + name + ".json"), o);
}

TEST(Experiment, EntropyBalanceResidual) {
  const PointResult p = run_point(bundled("entropy-balance", 10), 1);
  EXPECT_EQ(p.ensemble.stats.halted, 0);
  EXPECT_LE(p.ensemble.stats.rate_balance_max_abs, 0.05);
  EXPECT_TRUE(p.outcome.ms_bounded_error);
  EXPECT_EQ(p.necessity.status, AuditStatus::kPass);
}

TEST(Experiment, SignThresholdSweep) {
  const ExperimentResult r = run_experiment(bundled("sign-threshold", 20), 1);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_TRUE(r.points[0].outcome.ms_bounded_error);
  EXPECT_EQ(r.points[0].necessity.status, AuditStatus::kPass);
  EXPECT_FALSE(r.points[1].outcome.ms_bounded_error);
  EXPECT_NE(r.points[1].necessity.status, AuditStatus::kPass);
  EXPECT_FALSE(r.invariant_violation);
  EXPECT_EQ(exit_code(r), 0);
  const std::string csv = sweep_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Experiment, ModuloAuditFlagsCurvature) {
  const PointResult p = run_point(bundled("modulo-counterexample", 2, 30), 1);
  EXPECT_EQ(p.audits["assumption1"]["verdict"], "fail");
  EXPECT_TRUE(p.audits["assumption1"]["witness"].is_object());
  EXPECT_TRUE(p.audits["lemma2"]["first_negative_t"].is_null());
}

TEST(Experiment, RerunIsByteIdentical) {
  const ExperimentConfig cfg = bundled("kalman-boundary", 6, 60);
  const std::string a = runs_csv(run_point(cfg, 1).ensemble.runs);
  const std::string b = runs_csv(run_point(cfg, 2).ensemble.runs);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')), kRunsCsvHeader);
  // header plus horizon rows per run
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 6 * 60);
}

TEST(Experiment, BundleWriteAndReport) {
  const fs::path dir = scratch("bundle");
  fs::create_directories(dir);
  std::ofstream(dir / "stale.txt") << "old";
  const ExperimentResult r = run_experiment(bundled("kalman-boundary", 5, 60), 1);
  write_bundle(r, dir.string());
  EXPECT_FALSE(fs::exists(dir / "stale.txt"));
  for (const char* f : {"summary.json", "runs.csv", "audit.json", "err_sq.svg", "state_sq.svg", "di_rate.svg"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  for (const auto& e : fs::directory_iterator(dir.parent_path())) {
    EXPECT_EQ(e.path().filename().string().find(".slc-test-" + std::to_string(::getpid()) + "-bundle.tmp"),
              std::string::npos);
  }
  const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
  EXPECT_EQ(summary["schema_version"], kSchemaVersion);
  const auto rep = report_bundle(dir.string(), false);
  EXPECT_TRUE(rep["consistent"].get<bool>()) << rep.dump(2);
  fs::remove_all(dir);
}

TEST(Experiment, ReportDetectsTampering) {
  const fs::path dir = scratch("tamper");
  write_bundle(run_experiment(bundled("kalman-boundary", 3, 40), 1), dir.string());
  std::string csv = read_file(dir / "runs.csv");
  // bump the last di_cum value of the last row
  const auto pos = csv.rfind(',');
  csv = csv.substr(0, pos + 1) + "123.0\n";
  std::ofstream(dir / "runs.csv") << csv;
  EXPECT_FALSE(report_bundle(dir.string(), false)["consistent"].get<bool>());
  fs::remove_all(dir);
}

TEST(Svg, SingleSeriesSinglePolyline) {
  Series s{"err", {}, {}, ""};
  for (int i = 0; i < 10; ++i) {
    s.x.push_back(i);
    s.y.push_back(1.0 + i);
  }
  PlotStyle style;
  style.title = "demo";
  const std::string svg = render_svg({s}, style);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  const std::regex poly("<polyline");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()), 1);
  const auto p = svg.find("points=\"");
  const std::string pts = svg.substr(p + 8, svg.find('"', p + 8) - p - 8);
  EXPECT_EQ(std::count(pts.begin(), pts.end(), ','), 10);
}

TEST(Svg, GapsSplitPolylineAndNotesShow) {
  Series s{"run", {0, 1, 2, 3, 4}, {1, 2, NAN, 4, 5}, "3/10 halted"};
  PlotStyle style;
  style.log_y = true;
  style.reference_lines.push_back({"r_exp", 1.0});
  const std::string svg = render_svg({s}, style);
  const std::regex poly("<polyline");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()), 2);
  EXPECT_NE(svg.find("run (3/10 halted)"), std::string::npos);
  EXPECT_NE(svg.find("class=\"reference\""), std::string::npos);
}

TEST(Svg, EmptySeriesThrows) {
  try {
    render_svg({Series{"x", {0, 1}, {NAN, NAN}, ""}}, PlotStyle{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySeries);
  }
  PlotStyle log;
  log.log_y = true;
  EXPECT_THROW(render_svg({Series{"x", {0, 1}, {0.0, -1.0}, ""}}, log), Error);
}

// CLI, driven as a subprocess

struct CliResult {
  int code;
  std::string out;
};

CliResult cli(const std::string& args, const std::string& env = "") {
  const char* bin = std::getenv("SLC_CLI");
  if (!bin) return {-1, ""};
  const fs::path out = scratch("cli-out");
  const std::string cmd = env + " " + bin + " " + args + " >" + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CliResult r{WEXITSTATUS(status), read_file(out)};
  fs::remove(out);
  return r;
}

std::string config_path(const std::string& name) { return experiments_dir() + "/" + name + ".json"; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!std::getenv("SLC_CLI")) GTEST_SKIP() << "SLC_CLI not set";
  }
};

TEST_F(Cli, UnknownFlagExitsOne) {
  EXPECT_EQ(cli("run --config " + config_path("kalman-boundary") + " --bogus").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("run --config /nonexistent.json").code, 1);
}

TEST_F(Cli, Decompose) {
  const auto r = cli("decompose --config " + config_path("unobservable-2d"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["n_u"], 2);
  EXPECT_NEAR(j["r_exp_bits"].get<double>(), std::log2(3.0), 1e-12);
  EXPECT_LT(j["closed_loop_spectral_radius"].get<double>(), 1.0);
}

TEST_F(Cli, RunWritesBundleAndReportAgrees) {
  const fs::path dir = scratch("cli-bundle");
  const auto r = cli("run --config " + config_path("kalman-boundary") + " --runs 4 --horizon 60 --out " + dir.string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["runs"], 4);
  EXPECT_EQ(j["horizon"], 60);
  EXPECT_TRUE(fs::exists(dir / "runs.csv"));
  const auto rep = cli("report --format json --out " + dir.string());
  EXPECT_EQ(rep.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(rep.out)["consistent"].get<bool>());
  fs::remove_all(dir);
}

TEST_F(Cli, SeedFromEnvironmentAndFlag) {
  const std::string base = "run --config " + config_path("kalman-boundary") + " --runs 2 --horizon 40 --out ";
  const fs::path d1 = scratch("seed1"), d2 = scratch("seed2"), d3 = scratch("seed3");
  const auto a = cli(base + d1.string(), "SLC_SEED=77");
  const auto b = cli(base + d2.string() + " --seed 77");
  const auto c = cli(base + d3.string() + " --seed 78", "SLC_SEED=77");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(nlohmann::json::parse(a.out)["seed"], 77);
  EXPECT_EQ(read_file(d1 / "runs.csv"), read_file(d2 / "runs.csv"));
  EXPECT_EQ(nlohmann::json::parse(c.out)["seed"], 78);
  EXPECT_NE(read_file(d1 / "runs.csv"), read_file(d3 / "runs.csv"));
  for (const auto& d : {d1, d2, d3}) fs::remove_all(d);
}

TEST_F(Cli, AuditPrintsVerdicts) {
  const auto r = cli("audit --config " + config_path("student-t-prior") + " --horizon 40");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["assumption2"]["beta_hat"].get<double>(), 5.0 / 32.0, 1e-6);
}

}  // namespace
}  // namespace slc
