#include "slc/info.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "slc/error.hpp"

namespace slc {

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    comp_ += (sum_ - t) + v;
  } else {
    comp_ += (v - t) + sum_;
  }
  sum_ = t;
}

void InfoLedger::record_step(const FilterStep& step) {
  record_step(step.belief_pred.t, step.h_pred, step.h_post, step.channel_cmi);
}

void InfoLedger::record_step(int t, double h_pred, double h_post, std::optional<double> channel_cmi) {
  if (t != size()) {
    fail(ErrorCode::kOutOfOrderStep,
         "ledger expects step " + std::to_string(size()) + ", got " + std::to_string(t));
  }
  InfoRecord r;
  r.t = t;
  r.h_pred = h_pred;
  r.h_post = h_post;
  r.cmi = h_pred - h_post;
  di_.add(r.cmi);
  r.di_cum = di_.value();
  r.channel_cmi = channel_cmi;
  if (channel_cmi) channel_di_.add(*channel_cmi);
  records_.push_back(r);
  terminal_h_pred_.reset();
}

std::optional<double> InfoLedger::channel_di_cum() const {
  if (records_.empty() || !records_.front().channel_cmi) return std::nullopt;
  return channel_di_.value();
}

double InfoLedger::h_pred(int t) const {
  if (t >= 0 && t < size()) return records_[t].h_pred;
  if (t == size() && terminal_h_pred_) return *terminal_h_pred_;
  fail(ErrorCode::kPreconditionViolated, "no predicted entropy recorded for t = " + std::to_string(t));
}

double rate_balance_check(const InfoLedger& ledger, int T) {
  if (T < 0 || T >= ledger.size()) {
    fail(ErrorCode::kPreconditionViolated, "rate balance needs T+1 recorded steps");
  }
  const double n = T + 1.0;
  const double di = ledger.records()[T].di_cum;
  return di / n - ledger.r_exp() - (ledger.h0() - ledger.h_pred(T + 1)) / n;
}

std::string to_string(AuditStatus s) {
  switch (s) {
    case AuditStatus::kPass: return "pass";
    case AuditStatus::kFail: return "fail";
    case AuditStatus::kNotApplicable: return "not-applicable";
  }
  return "?";
}

NecessityVerdict necessity_audit(double di_rate, double r_exp, const std::vector<double>& error_trace,
                                 double threshold, int tail_window, double tol) {
  NecessityVerdict v;
  v.di_rate = di_rate;
  v.r_exp = r_exp;
  v.margin = di_rate - r_exp;
  const int n = static_cast<int>(error_trace.size());
  if (n == 0 || tail_window <= 0) {
    v.detail = "empty error trace";
    return v;
  }
  const int from = std::max(0, n - tail_window);
  v.tail_max = *std::max_element(error_trace.begin() + from, error_trace.end());
  v.bounded = std::isfinite(v.tail_max) && v.tail_max <= threshold;
  if (!v.bounded) {
    v.detail = "error not bounded over the tail window; premise fails";
    return v;
  }
  if (di_rate >= r_exp - tol) {
    v.status = AuditStatus::kPass;
    return v;
  }
  v.status = AuditStatus::kFail;
  std::ostringstream os;
  os.precision(6);
  os << "bounded error (tail max " << v.tail_max << " <= " << threshold << ") with di rate " << di_rate
     << " < r_exp " << r_exp << " - " << tol;
  v.detail = os.str();
  return v;
}

NecessityVerdict necessity_audit(const InfoLedger& ledger, const std::vector<double>& error_trace,
                                 double threshold, int tail_window, double tol) {
  const double rate = ledger.size() == 0 ? 0.0 : ledger.di_cum() / ledger.size();
  return necessity_audit(rate, ledger.r_exp(), error_trace, threshold, tail_window, tol);
}

namespace {

SandwichReport finish(double h_bits, const MatrixXd& cov, double cap, std::optional<bool> hint, double lower_tol) {
  SandwichReport r;
  const double n = static_cast<double>(cov.rows());
  r.h_actual = h_bits / n;
  r.h_gauss_same_cov = gaussian_entropy_bits(cov) / n;
  r.gap = r.h_gauss_same_cov - r.h_actual;
  r.gap_cap = cap;
  r.lower_tolerance = lower_tol;
  r.within_bounds = r.gap >= -lower_tol && r.gap <= cap;
  r.logconcave_hint = hint;
  return r;
}

}  // namespace

SandwichReport sandwich_check(const Belief& b, double gap_cap, std::optional<bool> logconcave_hint) {
  if (b.dim() == 0) fail(ErrorCode::kPreconditionViolated, "sandwich check on a 0-dimensional belief");
  double tol = 1e-6;
  if (const auto* p = std::get_if<ParticleBelief>(&b.rep)) {
    // kNN entropy noise: asymptotic variance (Var log f + trigamma(k)) / N nats^2,
    // taken at its Gaussian value Var log f = d/2 and with N the effective sample size
    const double d = static_cast<double>(p->states.rows());
    double trigamma = 0.0;
    for (int j = 1; j < p->knn_k; ++j) trigamma -= 1.0 / (static_cast<double>(j) * j);
    trigamma += std::numbers::pi * std::numbers::pi / 6.0;
    const double se_nats = std::sqrt((d / 2.0 + trigamma) / p->effective_sample_size());
    tol = 3.0 * se_nats / std::numbers::ln2 / d;
  }
  return finish(entropy_bits(b), moments(b).cov, gap_cap, logconcave_hint, tol);
}

SandwichReport sandwich_check_samples(const MatrixXd& samples, double gap_cap, int knn_k) {
  ParticleBelief p;
  p.states = samples;
  p.weights = VectorXd::Constant(samples.cols(), 1.0 / static_cast<double>(samples.cols()));
  p.knn_k = knn_k;
  return sandwich_check(Belief{p}, gap_cap);
}

}  // namespace slc
