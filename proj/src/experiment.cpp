#include "slc/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>
#include <unistd.h>

#include "slc/error.hpp"
#include "slc/svg.hpp"

namespace slc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const MatrixXd& M) {
  json a = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) a.push_back(to_json(VectorXd(M.row(i).transpose())));
  return a;
}

double tail_mean(const std::vector<double>& v, int window) {
  if (v.empty()) return NAN;
  const int from = std::max(0, static_cast<int>(v.size()) - window);
  CompensatedSum s;
  for (std::size_t t = from; t < v.size(); ++t) s.add(v[t]);
  return s.value() / static_cast<double>(v.size() - from);
}

// Standard error of the tail-window mean, averaging the per-step standard errors.
double tail_se(const std::vector<double>& se, int window) { return tail_mean(se, window); }

template <typename F>
json guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return json{{"verdict", "not-applicable"}, {"detail", e.what()}};
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorCode::kIoError, "cannot create " + p.string());
  out << content;
  out.close();
  if (!out) fail(ErrorCode::kIoError, "write failed for " + p.string());
}

std::vector<std::pair<std::string, std::string>> standard_plots(const std::vector<Series>& err,
                                                                const std::vector<Series>& state,
                                                                const std::vector<Series>& rate, double r_exp) {
  PlotStyle es;
  es.title = "E||e_t||^2";
  es.y_label = "mean-square error";
  es.log_y = true;
  PlotStyle ss = es;
  ss.title = "E||x_t||^2";
  ss.y_label = "mean-square state";
  PlotStyle rs;
  rs.title = "cumulative information rate";
  rs.y_label = "bits/step";
  rs.reference_lines.push_back({"r_exp", r_exp});
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&](const char* name, const std::vector<Series>& s, const PlotStyle& style) {
    try {
      out.emplace_back(name, render_svg(s, style));
    } catch (const Error& e) {
      // nothing plottable, e.g. every value is zero on a log axis
      if (e.code() != ErrorCode::kEmptySeries) throw;
    }
  };
  add("err_sq.svg", err, es);
  add("state_sq.svg", state, ss);
  add("di_rate.svg", rate, rs);
  return out;
}

}  // namespace

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const Overrides& o) {
  if (!o.seed && !o.runs && !o.horizon) return cfg;
  json j = cfg.source;
  if (o.seed) j["seed"] = *o.seed;
  if (o.runs) j["runs"] = *o.runs;
  if (o.horizon) j["horizon"] = *o.horizon;
  return parse_config(j.dump());
}

json audit_run(const LoopConfig& loop, const ExperimentConfig& cfg, int run) {
  LoopConfig lc = loop;
  lc.keep_final_posterior = true;
  const RunRecord rec = run_closed_loop(lc, cfg.seed, run);
  const Trajectory traj = rec.trajectory();
  HessianScan scan;
  scan.radius_std = cfg.audit.scan_radius_std;
  json out;
  out["run"] = run;
  out["length"] = rec.length();
  out["halted"] = rec.halted;

  out["assumption1"] = guarded([&] {
    const CurvatureAudit a = audit_assumption1(loop.channel, loop.decomp, traj, cfg.audit.curvature_window, scan);
    json j{{"verdict", to_string(a.verdict)}, {"window", a.window}, {"alpha_hat", a.alpha_hat}, {"detail", a.detail}};
    if (a.witness) {
      j["witness"] = {{"t", a.witness->t}, {"eigenvalues", to_json(a.witness->eigenvalues)}, {"z", to_json(a.witness->z)}};
    }
    j["scan_radius_std"] = cfg.audit.scan_radius_std;
    return j;
  });
  out["assumption2"] = guarded([&] {
    const PriorCurvatureAudit a = audit_assumption2(loop.prior);
    json j{{"verdict", to_string(a.verdict)}, {"beta_hat", a.beta_hat}, {"detail", a.detail}};
    if (a.argmax) j["argmax"] = to_json(*a.argmax);
    return j;
  });
  out["assumption3"] = guarded([&] {
    const ConditioningAudit a = audit_assumption3(rec.cond_numbers(), cfg.audit.condition_cap);
    return json{{"verdict", to_string(a.verdict)},
                {"kappa_hat", a.kappa_hat},
                {"kappa_cap", a.kappa_cap},
                {"witness_t", a.witness_t}};
  });
  out["lemma2"] = guarded([&] {
    if (traj.length() == 0) fail(ErrorCode::kPreconditionViolated, "empty trajectory");
    const UnstablePrior up(loop.prior, loop.decomp);
    const PosteriorCurvatureTrace tr =
        lemma2_accumulate(loop.channel, loop.decomp, up, traj, cfg.audit.lemma2_c, cfg.audit.curvature_window, scan);
    json j{{"c", tr.c}, {"lambda_max", tr.lambda_max}, {"lambda_max_truth", tr.lambda_max_truth}};
    j["first_negative_t"] = tr.first_negative_t ? json(*tr.first_negative_t) : json(nullptr);
    return j;
  });
  out["sandwich"] = guarded([&] {
    if (!rec.final_posterior) fail(ErrorCode::kPreconditionViolated, "no posterior recorded");
    const SandwichReport s = sandwich_check(*rec.final_posterior, cfg.audit.sandwich_cap);
    return json{{"h_actual_bits_per_dim", s.h_actual},
                {"h_gauss_bits_per_dim", s.h_gauss_same_cov},
                {"gap_bits_per_dim", s.gap},
                {"gap_cap", s.gap_cap},
                {"lower_tolerance", s.lower_tolerance},
                {"verdict", s.within_bounds ? "pass" : "fail"}};
  });
  return out;
}

PointResult run_point(const ExperimentConfig& cfg, int workers, std::optional<double> value) {
  PointResult p{value, cfg, build_loop(cfg)};
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  p.ensemble = run_ensemble(p.loop, cfg.runs, cfg.seed, workers);
  const EnsembleStats& st = p.ensemble.stats;

  Thresholds th = default_thresholds(p.loop, cfg.tail_window);
  if (cfg.state_bound) th.state_bound = *cfg.state_bound;
  if (cfg.error_bound) th.error_bound = *cfg.error_bound;
  th.zero = cfg.zero_threshold;
  if (cfg.horizon >= 2 * cfg.tail_window) {
    p.outcome = classify_outcome(st, th);
  } else {
    p.outcome.thresholds = th;
  }
  std::string first_failure;
  for (const auto& r : p.ensemble.runs) {
    if (!r.failure.empty()) {
      ++p.failed;
      if (first_failure.empty()) first_failure = "run " + std::to_string(r.run_id) + ": " + r.failure;
    } else if (r.halted) {
      ++p.halted_by_guard;
    }
  }
  const std::vector<double> empty;
  p.necessity = necessity_audit(st.di_rate, st.r_exp, st.halted == 0 ? st.err_sq : empty, th.error_bound,
                                th.tail_window, cfg.audit.necessity_tol);

  double ce = 0.0;
  for (const auto& r : p.ensemble.runs) ce = std::max(ce, certainty_equivalence_residual(r, p.loop.decomp, p.loop.K));
  const IssCheck iss = iss_check(p.ensemble.runs, p.loop.decomp, p.loop.K);

  p.audits = audit_run(p.loop, cfg);
  p.audits["necessity"] = {{"verdict", to_string(p.necessity.status)}, {"bounded", p.necessity.bounded},
                           {"di_rate", p.necessity.di_rate},       {"r_exp", p.necessity.r_exp},
                           {"margin", p.necessity.margin},         {"tail_max", p.necessity.tail_max},
                           {"detail", p.necessity.detail}};

  const int W = cfg.tail_window;
  json s;
  if (value) {
    s["parameter"] = cfg.sweep ? cfg.sweep->parameter : "";
    s["value"] = *value;
  }
  s["r_exp"] = st.r_exp;
  s["di_rate"] = st.di_rate;
  s["channel_di_rate"] = st.channel_di_rate ? json(*st.channel_di_rate) : json(nullptr);
  s["rate_balance"] = {{"mean", st.rate_balance_mean}, {"max_abs", st.rate_balance_max_abs}};
  s["h0_bits"] = st.h0;
  s["h_terminal_bits"] = st.h_terminal;
  s["runs"] = st.runs;
  s["halted"] = st.halted;
  s["halted_by_guard"] = p.halted_by_guard;
  s["failed"] = p.failed;
  if (!first_failure.empty()) s["first_failure"] = first_failure;
  s["completed_steps"] = static_cast<int>(st.state_sq.size());
  s["outcome"] = {{"ms_bounded_state", p.outcome.ms_bounded_state},
                  {"ms_bounded_error", p.outcome.ms_bounded_error},
                  {"asymptotic_state", p.outcome.asymptotic_state},
                  {"asymptotic_error", p.outcome.asymptotic_error},
                  {"tail_window", th.tail_window},
                  {"state_bound", th.state_bound},
                  {"error_bound", th.error_bound},
                  {"zero_threshold", th.zero},
                  {"tail_state_max", p.outcome.tail_state_max},
                  {"tail_error_max", p.outcome.tail_error_max}};
  s["tail"] = {{"state_sq_mean", tail_mean(st.state_sq, W)}, {"state_sq_se", tail_se(st.state_sq_se, W)},
               {"err_sq_mean", tail_mean(st.err_sq, W)},     {"err_sq_se", tail_se(st.err_sq_se, W)},
               {"cmi_mean", tail_mean(st.cmi, W)}};
  s["necessity"] = p.audits["necessity"];
  s["certainty_equivalence_residual"] = ce;
  s["iss"] = {{"gain", iss.gain}, {"worst_ratio", iss.worst_ratio}, {"holds", iss.holds}};
  if (auto am = analytic_kalman_moments(p.loop)) {
    s["kalman_oracle"] = {{"err_sq_tail", tail_mean(am->err_sq, W)}, {"state_sq_tail", tail_mean(am->state_sq, W)}};
  }
  s["gain"] = to_json(p.loop.K);
  p.summary = std::move(s);
  return p;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int workers, bool use_sweep) {
  ExperimentResult res;
  res.config = cfg;
  if (use_sweep && cfg.sweep) {
    for (double v : cfg.sweep->values) {
      res.points.push_back(run_point(with_parameter(cfg, cfg.sweep->parameter, v), workers, v));
    }
  } else {
    res.points.push_back(run_point(cfg, workers));
  }
  json s;
  s["schema_version"] = kSchemaVersion;
  s["experiment"] = cfg.name;
  if (!cfg.description.empty()) s["description"] = cfg.description;
  s["seed"] = cfg.seed;
  s["runs"] = cfg.runs;
  s["horizon"] = cfg.horizon;
  s["channel"] = cfg.channel.kind;
  s["prior"] = cfg.prior.family;
  s["filter"] = to_string(cfg.filter.kind);
  s["controller_mode"] = to_string(cfg.timing);
  s["gain_method"] = cfg.gain.method;
  // results under a channel schedule sit outside the stationary-channel model
  s["extension_time_varying_channel"] = cfg.channel.noise_decay.has_value();
  s["csv_columns"] = kRunsCsvHeader;
  json pts = json::array();
  for (const auto& p : res.points) {
    pts.push_back(p.summary);
    if (p.necessity.status == AuditStatus::kFail) res.invariant_violation = true;
  }
  s["points"] = std::move(pts);
  s["invariant_violation"] = res.invariant_violation;
  res.summary = std::move(s);
  return res;
}

std::string runs_csv(const std::vector<RunRecord>& runs) {
  std::string out = std::string(kRunsCsvHeader) + "\n";
  for (const auto& r : runs) {
    const auto& recs = r.ledger.records();
    for (int t = 0; t < r.length(); ++t) {
      const StepRecord& s = r.steps[t];
      const InfoRecord& ir = recs[t];
      out += std::to_string(s.t) + "," + std::to_string(r.run_id) + "," + format_double(s.state_norm_sq) + "," +
             format_double(s.err_norm_sq) + "," + format_double(ir.h_pred) + "," + format_double(ir.h_post) +
             "," + format_double(ir.cmi) + "," + format_double(ir.di_cum) + "\n";
    }
  }
  return out;
}

std::string sweep_csv(const ExperimentResult& result) {
  std::string out =
      "value,r_exp,di_rate,ms_bounded_state,ms_bounded_error,asymptotic_state,asymptotic_error,halted,"
      "tail_state_sq,tail_err_sq,necessity\n";
  for (const auto& p : result.points) {
    const json& s = p.summary;
    auto flag = [&](const char* k) { return s["outcome"][k].get<bool>() ? "1" : "0"; };
    out += (p.value ? format_double(*p.value) : std::string()) + "," + format_double(s["r_exp"].get<double>()) + "," +
           format_double(s["di_rate"].get<double>()) + "," + flag("ms_bounded_state") + "," +
           flag("ms_bounded_error") + "," + flag("asymptotic_state") + "," + flag("asymptotic_error") + "," +
           std::to_string(p.ensemble.stats.halted) + "," +
           format_double(s["tail"]["state_sq_mean"].is_number() ? s["tail"]["state_sq_mean"].get<double>() : NAN) +
           "," + format_double(s["tail"]["err_sq_mean"].is_number() ? s["tail"]["err_sq_mean"].get<double>() : NAN) +
           "," + to_string(p.necessity.status) + "\n";
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> render_plots(const ExperimentResult& result) {
  std::vector<Series> err, state, rate;
  double r_exp = 0.0;
  for (const auto& p : result.points) {
    const EnsembleStats& st = p.ensemble.stats;
    r_exp = st.r_exp;
    std::string label = result.config.name;
    if (p.value) label = "value " + format_double(*p.value).substr(0, 8);
    std::string note;
    if (st.halted > 0) note = std::to_string(st.halted) + "/" + std::to_string(st.runs) + " halted";
    std::vector<double> t(st.state_sq.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    err.push_back({label, t, st.err_sq, note});
    state.push_back({label, t, st.state_sq, note});
    std::vector<double> rt(st.di_cum.size());
    for (std::size_t i = 0; i < rt.size(); ++i) rt[i] = st.di_cum[i] / static_cast<double>(i + 1);
    rate.push_back({label, t, rt, note});
  }
  return standard_plots(err, state, rate, r_exp);
}

void write_bundle(const ExperimentResult& result, const std::string& dir) {
  const fs::path target = fs::absolute(fs::path(dir)).lexically_normal();
  const fs::path parent = target.parent_path();
  const std::string stem = target.filename().string();
  const fs::path tmp = parent / ("." + stem + ".tmp-" + std::to_string(::getpid()));
  const fs::path old = parent / ("." + stem + ".old-" + std::to_string(::getpid()));
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + parent.string() + ": " + ec.message());
  fs::remove_all(tmp, ec);
  if (!fs::create_directory(tmp, ec)) fail(ErrorCode::kIoError, "cannot create " + tmp.string() + ": " + ec.message());
  try {
    const auto& formats = result.config.formats;
    auto wants = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
    write_file(tmp / "summary.json", result.summary.dump(2) + "\n");
    const bool sweep = result.points.size() > 1 || result.points.front().value.has_value();
    for (std::size_t k = 0; k < result.points.size(); ++k) {
      const PointResult& p = result.points[k];
      fs::path pd = tmp;
      if (sweep) {
        pd = tmp / ("point-" + std::to_string(k));
        fs::create_directory(pd);
      }
      if (wants("csv")) write_file(pd / "runs.csv", runs_csv(p.ensemble.runs));
      if (wants("json")) write_file(pd / "audit.json", p.audits.dump(2) + "\n");
    }
    if (sweep) write_file(tmp / "sweep.csv", sweep_csv(result));
    if (wants("svg")) {
      for (const auto& [name, doc] : render_plots(result)) write_file(tmp / name, doc);
    }
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  if (fs::exists(target)) {
    fs::rename(target, old, ec);
    if (ec) fail(ErrorCode::kIoError, "cannot move aside " + target.string() + ": " + ec.message());
  }
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot publish " + target.string() + ": " + ec.message());
  fs::remove_all(old, ec);
}

namespace {

struct CsvEnsemble {
  std::vector<std::vector<double>> state, err, di;  // [run][t]
};

CsvEnsemble read_runs_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (line != kRunsCsvHeader) fail(ErrorCode::kParseError, p.string() + ": unexpected header '" + line + "'");
  CsvEnsemble e;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> f;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t next = std::min(line.find(',', pos), line.size());
      f.push_back(std::strtod(line.substr(pos, next - pos).c_str(), nullptr));
      pos = next + 1;
    }
    if (f.size() != 8) fail(ErrorCode::kParseError, p.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    const auto t = static_cast<std::size_t>(f[0]), run = static_cast<std::size_t>(f[1]);
    if (run >= e.state.size()) {
      e.state.resize(run + 1);
      e.err.resize(run + 1);
      e.di.resize(run + 1);
    }
    if (e.state[run].size() != t) fail(ErrorCode::kParseError, p.string() + ":" + std::to_string(lineno) + ": steps out of order");
    e.state[run].push_back(f[2]);
    e.err[run].push_back(f[3]);
    e.di[run].push_back(f[7]);
  }
  return e;
}

std::vector<double> per_step_mean(const std::vector<std::vector<double>>& v) {
  std::vector<double> out;
  for (std::size_t t = 0;; ++t) {
    CompensatedSum s;
    int n = 0;
    for (const auto& run : v) {
      if (run.size() > t) {
        s.add(run[t]);
        ++n;
      }
    }
    if (n == 0) break;
    out.push_back(s.value() / n);
  }
  return out;
}

}  // namespace

json report_bundle(const std::string& dir, bool write_svg) {
  const fs::path root(dir);
  std::ifstream in(root / "summary.json");
  if (!in) fail(ErrorCode::kIoError, "no summary.json in " + dir);
  json summary;
  try {
    summary = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, (root / "summary.json").string() + ": " + e.what());
  }
  if (summary.value("schema_version", 0) != kSchemaVersion) {
    fail(ErrorCode::kValidationError, "summary.json schema_version mismatch");
  }
  const int horizon = summary["horizon"].get<int>();
  const auto& points = summary["points"];
  const bool sweep = points.size() > 1 || points[0].contains("value");
  json report;
  report["experiment"] = summary["experiment"];
  report["consistent"] = true;
  std::vector<Series> err, state, rate;
  double r_exp = 0.0;
  json rows = json::array();
  for (std::size_t k = 0; k < points.size(); ++k) {
    const json& pt = points[k];
    const fs::path csv = sweep ? root / ("point-" + std::to_string(k)) / "runs.csv" : root / "runs.csv";
    if (!fs::exists(csv)) fail(ErrorCode::kIoError, "missing " + csv.string());
    const CsvEnsemble e = read_runs_csv(csv);
    const int W = pt["outcome"]["tail_window"].get<int>();
    const auto ms = per_step_mean(e.state), me = per_step_mean(e.err), md = per_step_mean(e.di);
    CompensatedSum rate_sum;
    int complete = 0;
    for (const auto& d : e.di) {
      if (static_cast<int>(d.size()) == horizon) {
        rate_sum.add(d.back() / horizon);
        ++complete;
      }
    }
    const double di_rate = complete ? rate_sum.value() / complete : 0.0;
    auto close = [](double a, const json& b) {
      if (!b.is_number()) return std::isnan(a);
      const double bv = b.get<double>();
      return std::abs(a - bv) <= 1e-12 * std::max(1.0, std::abs(bv));
    };
    const bool ok = close(di_rate, pt["di_rate"]) && close(tail_mean(ms, W), pt["tail"]["state_sq_mean"]) &&
                    close(tail_mean(me, W), pt["tail"]["err_sq_mean"]) &&
                    static_cast<int>(e.state.size()) == pt["runs"].get<int>() &&
                    pt["halted"].get<int>() == static_cast<int>(e.state.size()) - complete;
    if (!ok) report["consistent"] = false;
    r_exp = pt["r_exp"].get<double>();
    json row{{"di_rate", di_rate},
             {"r_exp", r_exp},
             {"tail_state_sq", tail_mean(ms, W)},
             {"tail_err_sq", tail_mean(me, W)},
             {"halted", static_cast<int>(e.state.size()) - complete},
             {"ms_bounded_state", pt["outcome"]["ms_bounded_state"]},
             {"ms_bounded_error", pt["outcome"]["ms_bounded_error"]},
             {"necessity", pt["necessity"]["verdict"]},
             {"matches_summary", ok}};
    if (pt.contains("value")) row["value"] = pt["value"];
    rows.push_back(row);

    std::string label = summary["experiment"].get<std::string>();
    if (pt.contains("value")) label = "value " + format_double(pt["value"].get<double>()).substr(0, 8);
    std::vector<double> t(ms.size()), rt(md.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    for (std::size_t i = 0; i < rt.size(); ++i) rt[i] = md[i] / static_cast<double>(i + 1);
    const int halted = static_cast<int>(e.state.size()) - complete;
    const std::string note = halted ? std::to_string(halted) + "/" + std::to_string(e.state.size()) + " halted" : "";
    err.push_back({label, t, me, note});
    state.push_back({label, t, ms, note});
    rate.push_back({label, t, rt, note});
  }
  report["points"] = rows;
  if (write_svg) {
    json written = json::array();
    for (const auto& [name, doc] : standard_plots(err, state, rate, r_exp)) {
      write_file(root / name, doc);
      written.push_back(name);
    }
    report["plots"] = written;
  }
  return report;
}

int exit_code(const ExperimentResult& result) { return result.invariant_violation ? 2 : 0; }

}  // namespace slc
