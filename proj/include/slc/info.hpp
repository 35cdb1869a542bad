#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slc/belief.hpp"
#include "slc/filters.hpp"

namespace slc {

/// Neumaier compensated accumulator; the order of add() calls fixes the result.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }
  void merge(const CompensatedSum& other) {
    add(other.sum_);
    add(other.comp_);
  }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct InfoRecord {
  int t = 0;
  double h_pred = 0.0;
  double h_post = 0.0;
  double cmi = 0.0;
  double di_cum = 0.0;
  std::optional<double> channel_cmi;
};

/// Directed-information ledger of one run, in bits.
class InfoLedger {
 public:
  InfoLedger() = default;
  InfoLedger(double r_exp, double h0) : r_exp_(r_exp), h0_(h0) {}

  /// Appends a step; its predicted belief must be stamped t = size().
  void record_step(const FilterStep& step);
  void record_step(int t, double h_pred, double h_post, std::optional<double> channel_cmi = {});
  /// Entropy of the predicted belief after the last recorded step.
  void record_terminal(double h_pred_next) { terminal_h_pred_ = h_pred_next; }

  const std::vector<InfoRecord>& records() const { return records_; }
  int size() const { return static_cast<int>(records_.size()); }
  double r_exp() const { return r_exp_; }
  double h0() const { return h0_; }
  double di_cum() const { return records_.empty() ? 0.0 : records_.back().di_cum; }
  /// Channel-side cumulative information (discrete channels only).
  std::optional<double> channel_di_cum() const;
  /// h_pred(t) for t <= size(); t = size() needs record_terminal.
  double h_pred(int t) const;

 private:
  double r_exp_ = 0.0;
  double h0_ = 0.0;
  std::vector<InfoRecord> records_;
  CompensatedSum di_;
  CompensatedSum channel_di_;
  std::optional<double> terminal_h_pred_;
};

/// di_cum(T)/(T+1) - r_exp - (h0 - h_pred(T+1))/(T+1), bits/step.
double rate_balance_check(const InfoLedger& ledger, int T);

enum class AuditStatus { kPass, kFail, kNotApplicable };
std::string to_string(AuditStatus s);

struct NecessityVerdict {
  AuditStatus status = AuditStatus::kNotApplicable;
  bool bounded = false;
  double di_rate = 0.0;
  double r_exp = 0.0;
  /// di_rate - r_exp
  double margin = 0.0;
  double tail_max = 0.0;
  std::string detail;
};

/// If the error trace stays below `threshold` over the last `tail_window`
/// steps, the directed-information rate must reach r_exp - tol.
NecessityVerdict necessity_audit(double di_rate, double r_exp, const std::vector<double>& error_trace,
                                 double threshold, int tail_window, double tol = 0.05);
NecessityVerdict necessity_audit(const InfoLedger& ledger, const std::vector<double>& error_trace,
                                 double threshold, int tail_window, double tol = 0.05);

struct SandwichReport {
  double h_actual = 0.0;         // bits/dim
  double h_gauss_same_cov = 0.0; // bits/dim
  double gap = 0.0;              // bits/dim
  double gap_cap = 1.0;
  /// gap >= -lower_tolerance counts as within bounds: 1e-6 for exact
  /// representations, three kNN standard errors for particle sets
  double lower_tolerance = 1e-6;
  bool within_bounds = true;
  std::optional<bool> logconcave_hint;
};

/// Gap between the Gaussian entropy at the belief's covariance and its own
/// entropy, per dimension.
SandwichReport sandwich_check(const Belief& b, double gap_cap = 1.0,
                              std::optional<bool> logconcave_hint = {});
/// Same, for an equally weighted sample set (one sample per column).
SandwichReport sandwich_check_samples(const MatrixXd& samples, double gap_cap = 1.0, int knn_k = 4);

}  // namespace slc
