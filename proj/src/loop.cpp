#include "slc/loop.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "slc/error.hpp"

namespace slc {

TimingMode timing_mode_from_string(const std::string& name) {
  if (name == "predict") return TimingMode::kPredict;
  if (name == "current") return TimingMode::kCurrent;
  fail(ErrorCode::kValidationError, "unknown controller mode '" + name + "' (predict|current)");
}

std::string to_string(TimingMode mode) {
  return mode == TimingMode::kPredict ? "predict" : "current";
}

Trajectory RunRecord::trajectory() const {
  Trajectory tr;
  for (const auto& s : steps) {
    tr.z_u.push_back(s.z_u);
    tr.z_s.push_back(s.z_s);
    tr.y.push_back(s.y);
    tr.u.push_back(s.u);
    tr.z_hat.push_back(s.z_hat);
    tr.post_cov.push_back(s.post_cov);
  }
  return tr;
}

std::vector<double> RunRecord::cond_numbers() const {
  std::vector<double> c;
  for (const auto& s : steps) c.push_back(s.cond);
  return c;
}

namespace {

VectorXd control(const MatrixXd& K, const VectorXd& z, Eigen::Index m) {
  if (K.size() == 0) return VectorXd::Zero(m);
  return K * z;
}

}  // namespace

RunRecord run_closed_loop(const LoopConfig& cfg, RandomStream& world, RandomStream& frng, int run_id) {
  const ModeDecompositiond& d = cfg.decomp;
  const Eigen::Index nu = d.n_u, ns = d.n_s(), m = cfg.model.B().cols();
  if (cfg.K.size() != 0 && (cfg.K.rows() != m || cfg.K.cols() != nu)) {
    fail(ErrorCode::kDimensionMismatch, "gain must be m x n_u");
  }
  RunRecord rec;
  rec.run_id = run_id;
  const UnstablePrior uprior(cfg.prior, d);
  VectorXd x = cfg.prior.sample(world);
  VectorXd zs_hat = uprior.stable_mean();
  Belief pred;
  try {
    pred = initial_belief(uprior, cfg.filter, frng);
  } catch (const Error& e) {
    rec.halted = true;
    rec.failure = e.what();
    return rec;
  }
  rec.ledger = InfoLedger(d.r_exp, entropy_bits(pred));

  for (int t = 0; t < cfg.horizon; ++t) {
    StepRecord s;
    s.t = t;
    s.x = x;
    const VectorXd z = d.T * x;
    s.z_u = z.head(nu);
    s.z_s = z.tail(ns);
    s.z_s_hat = zs_hat;
    const ChannelModel ch =
        cfg.noise_decay ? cfg.channel.with_noise_scale(std::pow(*cfg.noise_decay, t)) : cfg.channel;

    if (cfg.timing == TimingMode::kPredict) {
      s.z_ctrl = moments(pred).mean;
      s.u = control(cfg.K, s.z_ctrl, m);
    }
    s.y = sample(ch, x, world);
    if (cfg.observation_hook) cfg.observation_hook(t, s.y);

    FilterStep step;
    try {
      step = update(pred, ch, s.y, observation_map(d, zs_hat), cfg.filter, frng);
    } catch (const Error& e) {
      rec.halted = true;
      rec.failure = "t=" + std::to_string(t) + ": " + e.what();
      break;
    }
    const Moments post = moments(step.belief_post);
    if (cfg.timing == TimingMode::kCurrent) {
      s.z_ctrl = post.mean;
      s.u = control(cfg.K, s.z_ctrl, m);
    }
    s.z_hat = post.mean;
    s.post_cov = post.cov;
    s.state_norm_sq = x.squaredNorm();
    s.err_norm_sq = (s.z_hat - s.z_u).squaredNorm();
    s.ctrl_err_norm_sq = (s.z_ctrl - s.z_u).squaredNorm();
    s.cond = step.cond;
    s.ess = step.ess;
    rec.ledger.record_step(step);
    if (cfg.keep_beliefs) {
      rec.beliefs.push_back(to_json(step.belief_pred));
      rec.beliefs.push_back(to_json(step.belief_post));
    }

    x = cfg.model.A() * x + cfg.model.B() * s.u;
    zs_hat = d.A_s * zs_hat + d.B_s * s.u;
    pred = predict(step.belief_post, d.A_u, d.B_u * s.u);
    if (cfg.keep_final_posterior) rec.final_posterior = std::move(step.belief_post);
    rec.steps.push_back(std::move(s));
    const double norm = x.squaredNorm();
    if (t + 1 < cfg.horizon && (!std::isfinite(norm) || norm > cfg.divergence_bound)) {
      rec.halted = true;
      break;
    }
  }
  if (rec.failure.empty()) {
    try {
      rec.ledger.record_terminal(entropy_bits(pred));
    } catch (const Error&) {
    }
  }
  return rec;
}

RunRecord run_closed_loop(const LoopConfig& cfg, std::uint64_t seed, int run) {
  RandomStream world = make_run_stream(seed, 2 * static_cast<std::uint64_t>(run));
  RandomStream frng = make_run_stream(seed, 2 * static_cast<std::uint64_t>(run) + 1);
  return run_closed_loop(cfg, world, frng, run);
}

EnsembleStats summarize(const std::vector<RunRecord>& runs, int horizon, double r_exp) {
  EnsembleStats st;
  st.runs = static_cast<int>(runs.size());
  st.horizon = horizon;
  st.r_exp = r_exp;
  for (const auto& r : runs) st.halted += r.halted ? 1 : 0;
  const bool discrete = !runs.empty() && !runs.front().ledger.records().empty() &&
                        runs.front().ledger.records().front().channel_cmi.has_value();
  for (int t = 0; t < horizon; ++t) {
    CompensatedSum xs, xs2, es, es2, cs, hp, hq, ci, di, ch;
    int n = 0;
    for (const auto& r : runs) {
      if (r.length() <= t) continue;
      const StepRecord& s = r.steps[t];
      const InfoRecord& ir = r.ledger.records()[t];
      ++n;
      xs.add(s.state_norm_sq);
      xs2.add(s.state_norm_sq * s.state_norm_sq);
      es.add(s.err_norm_sq);
      es2.add(s.err_norm_sq * s.err_norm_sq);
      cs.add(s.ctrl_err_norm_sq);
      hp.add(ir.h_pred);
      hq.add(ir.h_post);
      ci.add(ir.cmi);
      di.add(ir.di_cum);
      if (ir.channel_cmi) ch.add(*ir.channel_cmi);
    }
    if (n == 0) break;
    st.alive.push_back(n);
    auto mean = [n](const CompensatedSum& c) { return c.value() / n; };
    auto se = [n](const CompensatedSum& s1, const CompensatedSum& s2) {
      if (n < 2) return 0.0;
      const double mu = s1.value() / n;
      const double var = std::max(0.0, (s2.value() - n * mu * mu) / (n - 1));
      return std::sqrt(var / n);
    };
    st.state_sq.push_back(mean(xs));
    st.state_sq_se.push_back(se(xs, xs2));
    st.err_sq.push_back(mean(es));
    st.err_sq_se.push_back(se(es, es2));
    st.ctrl_err_sq.push_back(mean(cs));
    st.h_pred.push_back(mean(hp));
    st.h_post.push_back(mean(hq));
    st.cmi.push_back(mean(ci));
    st.di_cum.push_back(mean(di));
    if (discrete) st.channel_cmi.push_back(mean(ch));
  }
  CompensatedSum h0, hT, rate, crate, rb;
  int complete = 0;
  double rb_max = 0.0;
  for (const auto& r : runs) {
    h0.add(r.ledger.h0());
    if (r.halted || r.length() != horizon) continue;
    ++complete;
    hT.add(r.ledger.h_pred(horizon));
    rate.add(r.ledger.di_cum() / horizon);
    if (auto c = r.ledger.channel_di_cum()) crate.add(*c / horizon);
    const double res = rate_balance_check(r.ledger, horizon - 1);
    rb.add(res);
    rb_max = std::max(rb_max, std::abs(res));
  }
  if (!runs.empty()) st.h0 = h0.value() / static_cast<double>(runs.size());
  if (complete > 0) {
    st.h_terminal = hT.value() / complete;
    st.di_rate = rate.value() / complete;
    if (discrete) st.channel_di_rate = crate.value() / complete;
    st.rate_balance_mean = rb.value() / complete;
    st.rate_balance_max_abs = rb_max;
  }
  return st;
}

EnsembleResult run_ensemble(const LoopConfig& cfg, int n_runs, std::uint64_t seed, int workers) {
  if (n_runs < 1) fail(ErrorCode::kPreconditionViolated, "need at least one run");
  EnsembleResult out;
  out.runs.resize(n_runs);
  workers = std::clamp(workers, 1, n_runs);
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](int w) {
    try {
      for (int i = next++; i < n_runs; i = next++) out.runs[i] = run_closed_loop(cfg, seed, i);
    } catch (...) {
      errors[w] = std::current_exception();
      next = n_runs;
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  out.stats = summarize(out.runs, cfg.horizon, cfg.decomp.r_exp);
  return out;
}

OutcomeClassification classify_outcome(const EnsembleStats& st, const Thresholds& th) {
  OutcomeClassification oc;
  oc.thresholds = th;
  const int H = st.horizon;
  if (H < 2 * th.tail_window) {
    fail(ErrorCode::kPreconditionViolated, "horizon must be at least twice the tail window");
  }
  if (st.halted > 0 || static_cast<int>(st.state_sq.size()) < H) return oc;
  auto window_stats = [&](const std::vector<double>& v, int from, int to, double& mx, double& mean) {
    mx = -INFINITY;
    CompensatedSum s;
    for (int t = from; t < to; ++t) {
      mx = std::max(mx, v[t]);
      s.add(v[t]);
    }
    mean = s.value() / (to - from);
  };
  double dummy;
  window_stats(st.state_sq, H - th.tail_window, H, oc.tail_state_max, oc.tail_state_mean);
  window_stats(st.err_sq, H - th.tail_window, H, oc.tail_error_max, oc.tail_error_mean);
  oc.ms_bounded_state = oc.tail_state_max <= th.state_bound;
  oc.ms_bounded_error = oc.tail_error_max <= th.error_bound;
  auto decreasing = [&](const std::vector<double>& v) {
    double q2, q4;
    window_stats(v, H / 4, H / 2, dummy, q2);
    window_stats(v, 3 * H / 4, H, dummy, q4);
    return q4 < 0.5 * q2;
  };
  oc.asymptotic_state = oc.ms_bounded_state && oc.tail_state_mean < th.zero && decreasing(st.state_sq);
  oc.asymptotic_error = oc.ms_bounded_error && oc.tail_error_mean < th.zero && decreasing(st.err_sq);
  return oc;
}

std::optional<AnalyticMoments> analytic_kalman_moments(const LoopConfig& cfg) {
  const ModeDecompositiond& d = cfg.decomp;
  // the filter in cfg is ignored: these are the moments of the Kalman-driven loop
  if (cfg.channel.kind() != ChannelKind::kLinearGaussian || cfg.prior.family() != PriorFamily::kGaussian ||
      d.n_u == 0) {
    return std::nullopt;
  }
  const Eigen::Index n = d.n(), nu = d.n_u, ns = d.n_s(), m = cfg.model.B().cols();
  const Eigen::Index p = cfg.channel.obs_dim();
  const Eigen::Index W = n + nu + ns + 1;  // [x; z_pred; zs_hat; 1]
  const MatrixXd lift = d.T_inv.leftCols(nu), Ls = d.T_inv.rightCols(ns);
  const MatrixXd Tu = d.T.topRows(nu);
  const MatrixXd& C = cfg.channel.C();
  const MatrixXd H = C * lift;
  const MatrixXd K = cfg.K.size() == 0 ? MatrixXd::Zero(m, nu) : cfg.K;
  const UnstablePrior up(cfg.prior, d);

  MatrixXd M = MatrixXd::Zero(W, W);
  VectorXd mean(W);
  mean << cfg.prior.mean(), up.mean(), up.stable_mean(), 1.0;
  M = mean * mean.transpose();
  M.topLeftCorner(n, n) += cfg.prior.covariance();
  MatrixXd P = up.covariance();

  AnalyticMoments out;
  for (int t = 0; t < cfg.horizon; ++t) {
    const MatrixXd R = cfg.noise_decay ? MatrixXd(cfg.channel.R() * std::pow(*cfg.noise_decay, t)) : cfg.channel.R();
    const MatrixXd S = H * P * H.transpose() + R;
    const MatrixXd G = S.ldlt().solve(H * P).transpose();
    const MatrixXd IGH = MatrixXd::Identity(nu, nu) - G * H;
    const MatrixXd P_post = IGH * P * IGH.transpose() + G * R * G.transpose();
    out.post_var_trace.push_back(P_post.trace());

    // z_post = Lpost w + G v
    MatrixXd Lpost = MatrixXd::Zero(nu, W);
    Lpost.leftCols(n) = G * C;
    Lpost.middleCols(n, nu) = IGH;
    Lpost.middleCols(n + nu, ns) = -G * C * Ls;
    MatrixXd E = Lpost;
    E.leftCols(n) -= Tu;
    out.state_sq.push_back(M.topLeftCorner(n, n).trace());
    out.err_sq.push_back((E * M * E.transpose()).trace() + (G * R * G.transpose()).trace());

    // control estimate
    MatrixXd Lc = MatrixXd::Zero(nu, W), Gc = MatrixXd::Zero(nu, p);
    if (cfg.timing == TimingMode::kPredict) {
      Lc.middleCols(n, nu) = MatrixXd::Identity(nu, nu);
    } else {
      Lc = Lpost;
      Gc = G;
    }
    MatrixXd F = MatrixXd::Zero(W, W), Fv = MatrixXd::Zero(W, p);
    F.topLeftCorner(n, n) = cfg.model.A();
    F.topRows(n) += cfg.model.B() * K * Lc;
    Fv.topRows(n) = cfg.model.B() * K * Gc;
    F.middleRows(n, nu) = d.A_u * Lpost + d.B_u * K * Lc;
    Fv.middleRows(n, nu) = d.A_u * G + d.B_u * K * Gc;
    if (ns > 0) {
      F.block(n + nu, n + nu, ns, ns) = d.A_s;
      F.middleRows(n + nu, ns) += d.B_s * K * Lc;
      Fv.middleRows(n + nu, ns) = d.B_s * K * Gc;
    }
    F(W - 1, W - 1) = 1.0;
    M = F * M * F.transpose() + Fv * R * Fv.transpose();
    P = d.A_u * P_post * d.A_u.transpose();
  }
  return out;
}

Thresholds default_thresholds(const LoopConfig& cfg, int tail_window) {
  Thresholds th;
  th.tail_window = tail_window;
  const auto am = analytic_kalman_moments(cfg);
  const MatrixXd K = cfg.K.size() == 0 ? MatrixXd::Zero(cfg.model.B().cols(), cfg.decomp.n_u) : cfg.K;
  const bool stable_loop =
      cfg.decomp.n_u == 0 || spectral_radius(MatrixXd(cfg.decomp.A_u + cfg.decomp.B_u * K)) < 1.0;
  if (am && stable_loop && cfg.horizon >= tail_window) {
    const int from = cfg.horizon - tail_window;
    th.state_bound = 10.0 * *std::max_element(am->state_sq.begin() + from, am->state_sq.end());
    th.error_bound = 10.0 * *std::max_element(am->err_sq.begin() + from, am->err_sq.end());
  } else {
    const double x2 = cfg.prior.second_moment();
    const double e2 = cfg.decomp.n_u == 0 ? 0.0 : UnstablePrior(cfg.prior, cfg.decomp).covariance().trace();
    th.state_bound = 10.0 * x2;
    th.error_bound = 10.0 * std::max(e2, 1e-12);
  }
  return th;
}

double certainty_equivalence_residual(const RunRecord& run, const ModeDecompositiond& decomp, const MatrixXd& K) {
  const MatrixXd Acl = decomp.A_u + decomp.B_u * K;
  double worst = 0.0;
  for (int t = 0; t + 1 < run.length(); ++t) {
    const StepRecord& s = run.steps[t];
    const VectorXd w = decomp.B_u * K * (s.z_ctrl - s.z_u);
    const VectorXd r = run.steps[t + 1].z_u - Acl * s.z_u - w;
    if (r.size() > 0) worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

IssCheck iss_check(const std::vector<RunRecord>& runs, const ModeDecompositiond& decomp, const MatrixXd& K) {
  IssCheck out;
  std::vector<const RunRecord*> complete;
  int horizon = 0;
  for (const auto& r : runs) horizon = std::max(horizon, r.length());
  for (const auto& r : runs) {
    if (!r.halted && r.length() == horizon) complete.push_back(&r);
  }
  if (complete.empty() || horizon == 0 || decomp.n_u == 0) return out;
  const MatrixXd Acl = decomp.A_u + decomp.B_u * K;
  const double bk = (decomp.B_u * K).operatorNorm();
  std::vector<double> z2(horizon, 0.0), e2(horizon, 0.0);
  for (int t = 0; t < horizon; ++t) {
    CompensatedSum a, b;
    for (const auto* r : complete) {
      a.add(r->steps[t].z_u.squaredNorm());
      b.add(r->steps[t].ctrl_err_norm_sq);
    }
    z2[t] = a.value() / complete.size();
    e2[t] = b.value() / complete.size();
  }
  MatrixXd power = MatrixXd::Identity(decomp.n_u, decomp.n_u);
  double power_sum = 0.0, emax = 0.0;
  for (int t = 1; t < horizon; ++t) {
    power_sum += power.operatorNorm();
    power = Acl * power;
    emax = std::max(emax, e2[t - 1]);
    const double g = power_sum * bk;
    const double env = std::pow(power.operatorNorm() * std::sqrt(z2[0]) + g * std::sqrt(emax), 2);
    out.gain = g;
    if (env > 0) out.worst_ratio = std::max(out.worst_ratio, z2[t] / env);
  }
  out.holds = out.worst_ratio <= 1.0 + 1e-9;
  return out;
}

}  // namespace slc
