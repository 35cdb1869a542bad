#include "slc/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "slc/error.hpp"

namespace slc {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& msg) {
  fail(ErrorCode::kValidationError, path + ": " + msg);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// An object node that only admits the listed keys.
class Obj {
 public:
  Obj(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) invalid(path_.empty() ? "<root>" : path_, "expected an object");
    for (const auto& [key, value] : j.items()) {
      if (!allowed.count(key)) invalid(join(path_, key), "unknown key");
    }
  }

  const json* get(const std::string& key) const {
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  bool has(const std::string& key) const { return get(key) != nullptr; }
  std::string path(const std::string& key) const { return join(path_, key); }

 private:
  const json& j_;
  std::string path_;
};

double number(const json& j, const std::string& path) {
  if (!j.is_number()) invalid(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) invalid(path, "must be finite");
  return v;
}

int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) invalid(path, "expected an integer");
  const auto v = j.get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) invalid(path, "out of range");
  return static_cast<int>(v);
}

std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) invalid(path, "expected a string");
  return j.get<std::string>();
}

bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) invalid(path, "expected true or false");
  return j.get<bool>();
}

// A bare number is accepted as a 1x1 matrix.
MatrixXd matrix(const json& j, const std::string& path) {
  if (j.is_number()) return MatrixXd::Constant(1, 1, number(j, path));
  if (!j.is_array() || j.empty()) invalid(path, "expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) invalid(path + "[0]", "expected a non-empty row");
  MatrixXd M(j.size(), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string rp = path + "[" + std::to_string(i) + "]";
    if (!j[i].is_array() || j[i].size() != cols) invalid(rp, "rows must all have " + std::to_string(cols) + " entries");
    for (std::size_t k = 0; k < cols; ++k) M(i, k) = number(j[i][k], rp + "[" + std::to_string(k) + "]");
  }
  return M;
}

VectorXd vector(const json& j, const std::string& path) {
  if (j.is_number()) return VectorXd::Constant(1, number(j, path));
  if (!j.is_array() || j.empty()) invalid(path, "expected a non-empty array of numbers");
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

// Scalar r means r * I.
MatrixXd covariance(const json& j, const std::string& path, Eigen::Index dim) {
  if (j.is_number()) {
    const double r = number(j, path);
    if (r <= 0) invalid(path, "must be positive");
    return r * MatrixXd::Identity(dim, dim);
  }
  MatrixXd M = matrix(j, path);
  if (M.rows() != dim || M.cols() != dim) {
    invalid(path, "expected " + std::to_string(dim) + "x" + std::to_string(dim));
  }
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, M.cwiseAbs().maxCoeff())) {
    invalid(path, "must be symmetric");
  }
  Eigen::LLT<MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) invalid(path, "must be positive definite");
  return M;
}

void parse_channel(const json& j, ExperimentConfig& cfg) {
  const Eigen::Index n = cfg.A.rows();
  Obj o(j, "channel", {"kind", "params", "schedule"});
  ChannelConfig& ch = cfg.channel;
  if (auto* k = o.get("kind")) {
    ch.kind = text(*k, o.path("kind"));
    try {
      channel_kind_from_string(ch.kind);
    } catch (const Error& e) {
      invalid(o.path("kind"), "unknown channel kind \"" + ch.kind +
                                  "\" (linear-gaussian|tanh-gaussian|cubic-gaussian|sign-quantizer|modulo-gaussian)");
    }
  }
  const ChannelKind kind = channel_kind_from_string(ch.kind);
  std::set<std::string> allowed = {"C"};
  if (kind != ChannelKind::kSignQuantizer) allowed.insert("R");
  if (kind == ChannelKind::kTanhGaussian) allowed.insert("scale");
  if (kind == ChannelKind::kModuloGaussian) allowed.insert("period");
  if (kind == ChannelKind::kSignQuantizer) allowed.insert({"levels", "step"});
  const json empty = json::object();
  const json& pj = o.has("params") ? *o.get("params") : empty;
  Obj p(pj, o.path("params"), allowed);
  ch.C = p.has("C") ? matrix(*p.get("C"), p.path("C")) : MatrixXd::Identity(n, n);
  if (ch.C.cols() != n) invalid(p.path("C"), "must have " + std::to_string(n) + " columns");
  if (kind != ChannelKind::kSignQuantizer) {
    ch.R = p.has("R") ? covariance(*p.get("R"), p.path("R"), ch.C.rows()) : MatrixXd::Identity(ch.C.rows(), ch.C.rows());
  }
  if (auto* v = p.get("scale")) ch.scale = number(*v, p.path("scale"));
  if (auto* v = p.get("period")) {
    ch.period = number(*v, p.path("period"));
    if (ch.period <= 0) invalid(p.path("period"), "must be positive");
  }
  if (auto* v = p.get("levels")) {
    ch.levels = integer(*v, p.path("levels"));
    if (ch.levels < 2) invalid(p.path("levels"), "need at least 2 levels");
  }
  if (auto* v = p.get("step")) {
    ch.step = number(*v, p.path("step"));
    if (ch.step <= 0) invalid(p.path("step"), "must be positive");
  }
  if (auto* s = o.get("schedule")) {
    if (!cfg.time_varying_extension) {
      invalid(o.path("schedule"),
              "time-varying channels are an extension beyond the stationary channel model; "
              "set extensions.time_varying_channel = true to enable");
    }
    if (kind == ChannelKind::kSignQuantizer) invalid(o.path("schedule"), "the sign quantizer has no noise to schedule");
    Obj so(*s, o.path("schedule"), {"noise_decay"});
    if (!so.has("noise_decay")) invalid(so.path("noise_decay"), "required");
    ch.noise_decay = number(*so.get("noise_decay"), so.path("noise_decay"));
    if (*ch.noise_decay <= 0 || *ch.noise_decay > 1) invalid(so.path("noise_decay"), "must lie in (0, 1]");
  }
}

void parse_prior(const json& j, ExperimentConfig& cfg) {
  const Eigen::Index n = cfg.A.rows();
  Obj o(j, "prior", {"family", "params"});
  PriorConfig& pr = cfg.prior;
  if (auto* f = o.get("family")) {
    pr.family = text(*f, o.path("family"));
    if (pr.family != "gaussian" && pr.family != "student-t") {
      invalid(o.path("family"), "unknown prior family \"" + pr.family + "\" (gaussian|student-t)");
    }
  }
  const json empty = json::object();
  const json& pj = o.has("params") ? *o.get("params") : empty;
  if (pr.family == "gaussian") {
    Obj p(pj, o.path("params"), {"mean", "cov"});
    pr.mean = p.has("mean") ? vector(*p.get("mean"), p.path("mean")) : VectorXd::Zero(n);
    pr.cov = p.has("cov") ? covariance(*p.get("cov"), p.path("cov"), n) : MatrixXd::Identity(n, n);
  } else {
    Obj p(pj, o.path("params"), {"location", "dof", "scale"});
    pr.mean = p.has("location") ? vector(*p.get("location"), p.path("location")) : VectorXd::Zero(n);
    if (auto* v = p.get("dof")) pr.dof = number(*v, p.path("dof"));
    if (auto* v = p.get("scale")) pr.scale = number(*v, p.path("scale"));
    if (pr.dof <= 0) invalid(p.path("dof"), "must be positive");
    if (pr.scale <= 0) invalid(p.path("scale"), "must be positive");
  }
  if (pr.mean.size() != n) invalid(o.path("params"), "mean/location must have " + std::to_string(n) + " entries");
}

void parse_filter(const json& j, ExperimentConfig& cfg) {
  Obj o(j, "filter", {"kind", "cells_per_std", "half_width_std", "max_cells", "particles", "resample_fraction",
                      "jitter", "knn_k"});
  FilterOptions& f = cfg.filter;
  if (auto* k = o.get("kind")) {
    const std::string name = text(*k, o.path("kind"));
    if (name != "kalman" && name != "grid" && name != "particle" && name != "particles") {
      invalid(o.path("kind"), "unknown filter kind \"" + name + "\" (kalman|grid|particle)");
    }
    f.kind = filter_kind_from_string(name);
  }
  auto positive = [&](const char* key, double& dst) {
    if (auto* v = o.get(key)) {
      dst = number(*v, o.path(key));
      if (dst <= 0) invalid(o.path(key), "must be positive");
    }
  };
  auto count = [&](const char* key, auto& dst, long long lo) {
    if (auto* v = o.get(key)) {
      const int x = integer(*v, o.path(key));
      if (x < lo) invalid(o.path(key), "must be at least " + std::to_string(lo));
      dst = x;
    }
  };
  positive("cells_per_std", f.cells_per_std);
  positive("half_width_std", f.half_width_std);
  count("max_cells", f.max_cells, 1);
  count("particles", f.particles, 2);
  positive("resample_fraction", f.resample_fraction);
  if (auto* v = o.get("jitter")) {
    f.jitter = number(*v, o.path("jitter"));
    if (f.jitter < 0 || f.jitter >= 1) invalid(o.path("jitter"), "must lie in [0, 1)");
  }
  count("knn_k", f.knn_k, 1);
}

void parse_controller(const json& j, ExperimentConfig& cfg) {
  Obj o(j, "controller", {"mode", "gain"});
  if (auto* m = o.get("mode")) {
    const std::string name = text(*m, o.path("mode"));
    if (name != "predict" && name != "current") invalid(o.path("mode"), "expected predict or current");
    cfg.timing = timing_mode_from_string(name);
  }
  if (auto* g = o.get("gain")) {
    Obj go(*g, o.path("gain"), {"method", "K", "poles", "Q", "R"});
    GainConfig& gc = cfg.gain;
    if (auto* m = go.get("method")) gc.method = text(*m, go.path("method"));
    static const std::set<std::string> methods = {"lqr", "deadbeat", "poles", "manual", "open-loop"};
    if (!methods.count(gc.method)) {
      invalid(go.path("method"), "unknown gain method \"" + gc.method + "\" (lqr|deadbeat|poles|manual|open-loop)");
    }
    if (gc.method == "manual") {
      if (!go.has("K")) invalid(go.path("K"), "required for the manual method");
      gc.K = matrix(*go.get("K"), go.path("K"));
    } else if (go.has("K")) {
      invalid(go.path("K"), "only used by the manual method");
    }
    if (gc.method == "poles") {
      const json* pj = go.get("poles");
      if (!pj || !pj->is_array()) invalid(go.path("poles"), "required: list of numbers or [re, im] pairs");
      for (std::size_t i = 0; i < pj->size(); ++i) {
        const std::string ip = go.path("poles") + "[" + std::to_string(i) + "]";
        const json& e = (*pj)[i];
        if (e.is_array()) {
          if (e.size() != 2) invalid(ip, "expected [re, im]");
          gc.poles.emplace_back(number(e[0], ip + "[0]"), number(e[1], ip + "[1]"));
        } else {
          gc.poles.emplace_back(number(e, ip), 0.0);
        }
      }
    } else if (go.has("poles")) {
      invalid(go.path("poles"), "only used by the poles method");
    }
    if (gc.method != "lqr" && (go.has("Q") || go.has("R"))) invalid(go.path("Q"), "weights only apply to lqr");
    if (auto* q = go.get("Q")) gc.Q = matrix(*q, go.path("Q"));
    if (auto* r = go.get("R")) gc.R = matrix(*r, go.path("R"));
  }
}

ExperimentConfig from_json(const json& root) {
  ExperimentConfig cfg;
  cfg.source = root;
  Obj o(root, "", {"name", "description", "system", "channel", "extensions", "prior", "filter", "controller",
                   "horizon", "runs", "seed", "thresholds", "audit", "sweep", "outputs"});
  if (auto* v = o.get("name")) {
    cfg.name = text(*v, "name");
    if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos) {
      invalid("name", "must be a non-empty plain file name");
    }
  }
  if (auto* v = o.get("description")) cfg.description = text(*v, "description");

  if (!o.has("system")) invalid("system", "required");
  {
    Obj s(*o.get("system"), "system", {"A", "B", "allow_stable"});
    if (!s.has("A")) invalid("system.A", "required");
    cfg.A = matrix(*s.get("A"), "system.A");
    if (cfg.A.rows() != cfg.A.cols()) invalid("system.A", "must be square");
    cfg.B = s.has("B") ? matrix(*s.get("B"), "system.B") : MatrixXd::Identity(cfg.A.rows(), cfg.A.rows());
    if (cfg.B.rows() != cfg.A.rows()) invalid("system.B", "must have as many rows as A");
    if (auto* v = s.get("allow_stable")) cfg.allow_stable = boolean(*v, "system.allow_stable");
  }
  if (auto* e = o.get("extensions")) {
    Obj x(*e, "extensions", {"time_varying_channel"});
    if (auto* v = x.get("time_varying_channel")) cfg.time_varying_extension = boolean(*v, x.path("time_varying_channel"));
  }
  parse_channel(o.has("channel") ? *o.get("channel") : json::object(), cfg);
  parse_prior(o.has("prior") ? *o.get("prior") : json::object(), cfg);

  const bool linear = cfg.channel.kind == "linear-gaussian";
  cfg.filter.kind = linear && cfg.prior.family == "gaussian" ? FilterKind::kKalman
                    : cfg.A.rows() <= 2                       ? FilterKind::kGrid
                                                              : FilterKind::kParticle;
  if (auto* f = o.get("filter")) parse_filter(*f, cfg);
  if (cfg.filter.kind == FilterKind::kKalman && (!linear || cfg.prior.family != "gaussian")) {
    invalid("filter.kind", "the Kalman filter needs a linear-gaussian channel and a gaussian prior");
  }
  if (auto* c = o.get("controller")) parse_controller(*c, cfg);

  if (auto* v = o.get("horizon")) cfg.horizon = integer(*v, "horizon");
  if (cfg.horizon < 1) invalid("horizon", "must be at least 1");
  if (auto* v = o.get("runs")) cfg.runs = integer(*v, "runs");
  if (cfg.runs < 1) invalid("runs", "must be at least 1");
  if (auto* v = o.get("seed")) {
    if (!v->is_number_unsigned()) invalid("seed", "expected a non-negative integer");
    cfg.seed = v->get<std::uint64_t>();
  }
  if (auto* t = o.get("thresholds")) {
    Obj th(*t, "thresholds", {"tail_window", "state_bound", "error_bound", "zero"});
    if (auto* v = th.get("tail_window")) cfg.tail_window = integer(*v, th.path("tail_window"));
    if (cfg.tail_window < 1) invalid(th.path("tail_window"), "must be at least 1");
    if (auto* v = th.get("state_bound")) cfg.state_bound = number(*v, th.path("state_bound"));
    if (auto* v = th.get("error_bound")) cfg.error_bound = number(*v, th.path("error_bound"));
    if (auto* v = th.get("zero")) cfg.zero_threshold = number(*v, th.path("zero"));
  }
  if (auto* a = o.get("audit")) {
    Obj au(*a, "audit", {"curvature_window", "scan_radius_std", "lemma2_c", "condition_cap", "sandwich_cap", "necessity_tol"});
    if (auto* v = au.get("curvature_window")) cfg.audit.curvature_window = integer(*v, au.path("curvature_window"));
    if (cfg.audit.curvature_window < 1) invalid(au.path("curvature_window"), "must be at least 1");
    if (auto* v = au.get("scan_radius_std")) {
      cfg.audit.scan_radius_std = number(*v, au.path("scan_radius_std"));
      if (cfg.audit.scan_radius_std < 0) invalid(au.path("scan_radius_std"), "must be non-negative");
    }
    if (auto* v = au.get("lemma2_c")) cfg.audit.lemma2_c = number(*v, au.path("lemma2_c"));
    if (auto* v = au.get("condition_cap")) cfg.audit.condition_cap = number(*v, au.path("condition_cap"));
    if (auto* v = au.get("sandwich_cap")) cfg.audit.sandwich_cap = number(*v, au.path("sandwich_cap"));
    if (auto* v = au.get("necessity_tol")) cfg.audit.necessity_tol = number(*v, au.path("necessity_tol"));
  }
  if (auto* s = o.get("sweep")) {
    Obj sw(*s, "sweep", {"parameter", "values"});
    SweepConfig sc;
    if (!sw.has("parameter")) invalid(sw.path("parameter"), "required");
    sc.parameter = text(*sw.get("parameter"), sw.path("parameter"));
    const json* vals = sw.get("values");
    if (!vals || !vals->is_array() || vals->empty()) invalid(sw.path("values"), "expected a non-empty list");
    for (std::size_t i = 0; i < vals->size(); ++i) {
      sc.values.push_back(number((*vals)[i], sw.path("values") + "[" + std::to_string(i) + "]"));
    }
    json::json_pointer ptr;
    try {
      ptr = json::json_pointer(sc.parameter);
    } catch (const json::exception& e) {
      invalid(sw.path("parameter"), "not a JSON pointer: " + sc.parameter);
    }
    if (!root.contains(ptr) || !root.at(ptr).is_number()) {
      invalid(sw.path("parameter"), "must point at a number present in the config: " + sc.parameter);
    }
    if (sc.parameter.rfind("/sweep", 0) == 0) invalid(sw.path("parameter"), "cannot sweep the sweep itself");
    cfg.sweep = sc;
  }
  if (auto* out = o.get("outputs")) {
    Obj ou(*out, "outputs", {"dir", "formats"});
    if (auto* v = ou.get("dir")) cfg.out_dir = text(*v, ou.path("dir"));
    if (auto* f = ou.get("formats")) {
      if (!f->is_array()) invalid(ou.path("formats"), "expected a list");
      cfg.formats.clear();
      for (std::size_t i = 0; i < f->size(); ++i) {
        const std::string fp = ou.path("formats") + "[" + std::to_string(i) + "]";
        const std::string name = text((*f)[i], fp);
        if (name != "csv" && name != "json" && name != "svg") invalid(fp, "expected csv, json or svg");
        cfg.formats.push_back(name);
      }
    }
  }
  // Model-level checks (stability, controllability, gain shapes) surface here too.
  build_loop(cfg);
  return cfg;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    fail(ErrorCode::kParseError, "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + what);
  }
  return from_json(root);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParseError) fail(e.code(), path + ": " + std::string(e.what()).substr(to_string(e.code()).size() + 2));
    throw;
  }
}

ExperimentConfig with_parameter(const ExperimentConfig& cfg, const std::string& pointer, double value) {
  json j = cfg.source;
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr) || !j.at(ptr).is_number()) invalid("sweep.parameter", "no number at " + pointer);
  j.at(ptr) = value;
  return from_json(j);
}

ChannelModel build_channel(const ExperimentConfig& cfg) {
  const ChannelConfig& c = cfg.channel;
  switch (channel_kind_from_string(c.kind)) {
    case ChannelKind::kLinearGaussian: return ChannelModel::linear_gaussian(c.C, c.R);
    case ChannelKind::kTanhGaussian: return ChannelModel::tanh_gaussian(c.scale, c.R, c.C);
    case ChannelKind::kCubicGaussian: return ChannelModel::cubic_gaussian(c.R, c.C);
    case ChannelKind::kSignQuantizer: return ChannelModel::sign_quantizer(c.C, c.levels, c.step);
    case ChannelKind::kModuloGaussian: return ChannelModel::modulo_gaussian(c.period, c.R, c.C);
  }
  invalid("channel.kind", "unsupported");
}

Prior build_prior(const ExperimentConfig& cfg) {
  const PriorConfig& p = cfg.prior;
  if (p.family == "gaussian") return Prior::gaussian(p.mean, p.cov);
  return Prior::student_t(p.mean, p.dof, p.scale);
}

LoopConfig build_loop(const ExperimentConfig& cfg) {
  SystemModeld model(cfg.A, cfg.B, cfg.allow_stable);
  ModeDecompositiond decomp = decompose(model);
  LoopConfig lc{model, decomp, build_channel(cfg), build_prior(cfg)};
  lc.filter = cfg.filter;
  lc.timing = cfg.timing;
  lc.horizon = cfg.horizon;
  lc.noise_decay = cfg.channel.noise_decay;
  const Eigen::Index m = model.m(), nu = decomp.n_u;
  const GainConfig& g = cfg.gain;
  if (g.method == "manual") {
    if (g.K.rows() != m || g.K.cols() != nu) {
      invalid("controller.gain.K", "expected " + std::to_string(m) + "x" + std::to_string(nu) + " (inputs x unstable modes)");
    }
    lc.K = g.K;
  } else if (g.method == "open-loop" || nu == 0) {
    lc.K = MatrixXd::Zero(m, nu);
  } else {
    GainDesign spec;
    spec.method = g.method == "lqr"        ? GainMethod::kQuadraticRegulator
                  : g.method == "deadbeat" ? GainMethod::kDeadbeat
                                           : GainMethod::kPolePlacement;
    spec.poles = g.poles;
    spec.state_weight = g.Q;
    spec.input_weight = g.R;
    lc.K = design_gain(decomp, spec).K;
  }
  return lc;
}

}  // namespace slc
