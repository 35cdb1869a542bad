#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slc/audit.hpp"
#include "slc/channel.hpp"
#include "slc/filters.hpp"
#include "slc/info.hpp"
#include "slc/prior.hpp"
#include "slc/system.hpp"

namespace slc {

/// predict: u_t = K E[z_t | y^{t-1}], so u_t never sees y_t.
/// current: u_t = K E[z_t | y^t].
enum class TimingMode { kPredict, kCurrent };

TimingMode timing_mode_from_string(const std::string& name);
std::string to_string(TimingMode mode);

struct LoopConfig {
  SystemModeld model;
  ModeDecompositiond decomp;
  ChannelModel channel;
  Prior prior;
  FilterOptions filter;
  TimingMode timing = TimingMode::kPredict;
  /// u = K zhat, K is m x n_u (acts on the unstable block only)
  MatrixXd K;
  int horizon = 100;
  /// noise covariance R_t = R gamma^t (time-varying channel extension)
  std::optional<double> noise_decay;
  double divergence_bound = 1e12;
  bool keep_beliefs = false;
  bool keep_final_posterior = false;
  /// Test hook applied to y_t before the update.
  std::function<void(int, VectorXd&)> observation_hook;
};

struct StepRecord {
  int t = 0;
  VectorXd x, u, y;
  VectorXd z_u;      // true unstable coordinates
  VectorXd z_s;      // true stable coordinates
  VectorXd z_hat;    // posterior mean
  MatrixXd post_cov; // posterior covariance
  VectorXd z_ctrl;   // estimate the controller used
  VectorXd z_s_hat;  // nominal stable block used by the estimator
  double state_norm_sq = 0.0;
  double err_norm_sq = 0.0;       // ||z_hat - z_u||^2
  double ctrl_err_norm_sq = 0.0;  // ||z_ctrl - z_u||^2
  double cond = 1.0;
  std::optional<double> ess;
};

struct RunRecord {
  int run_id = 0;
  std::vector<StepRecord> steps;
  InfoLedger ledger;
  bool halted = false;   // divergence guard or filter failure
  std::string failure;   // set if a module error aborted the run
  std::vector<nlohmann::json> beliefs;
  std::optional<Belief> final_posterior;
  int length() const { return static_cast<int>(steps.size()); }
  Trajectory trajectory() const;
  std::vector<double> cond_numbers() const;
};

RunRecord run_closed_loop(const LoopConfig& cfg, RandomStream& world, RandomStream& filter_rng, int run_id = 0);

/// Per-run streams for run `run` under `seed` (world and filter streams differ).
RunRecord run_closed_loop(const LoopConfig& cfg, std::uint64_t seed, int run);

struct EnsembleStats {
  int runs = 0;
  int halted = 0;
  int horizon = 0;
  double r_exp = 0.0;
  std::vector<int> alive;
  std::vector<double> state_sq, state_sq_se;
  std::vector<double> err_sq, err_sq_se;
  std::vector<double> ctrl_err_sq;
  std::vector<double> h_pred, h_post, cmi, di_cum;
  std::vector<double> channel_cmi;  // empty for continuous channels
  double h0 = 0.0;
  double h_terminal = 0.0;
  /// mean di_cum over runs that reached the horizon, divided by horizon
  double di_rate = 0.0;
  std::optional<double> channel_di_rate;
  /// ensemble mean of per-run rate-balance residuals and their max |.|
  double rate_balance_mean = 0.0;
  double rate_balance_max_abs = 0.0;
};

struct EnsembleResult {
  std::vector<RunRecord> runs;
  EnsembleStats stats;
};

/// Runs are independent; results are reduced in run order so the statistics
/// do not depend on `workers`.
EnsembleResult run_ensemble(const LoopConfig& cfg, int n_runs, std::uint64_t seed, int workers = 1);
EnsembleStats summarize(const std::vector<RunRecord>& runs, int horizon, double r_exp);

struct Thresholds {
  int tail_window = 20;
  double state_bound = 0.0;
  double error_bound = 0.0;
  double zero = 1e-3;
};

struct OutcomeClassification {
  bool ms_bounded_state = false;
  bool ms_bounded_error = false;
  bool asymptotic_state = false;
  bool asymptotic_error = false;
  Thresholds thresholds;
  double tail_state_max = 0.0, tail_error_max = 0.0;
  double tail_state_mean = 0.0, tail_error_mean = 0.0;
};

OutcomeClassification classify_outcome(const EnsembleStats& stats, const Thresholds& th);

/// Exact second moments of the Kalman-driven closed loop for the same plant,
/// channel, prior, gain and timing (linear-Gaussian channel, Gaussian prior;
/// cfg.filter is ignored): per-step E||x_t||^2 and E||zhat_t - z_t||^2.
struct AnalyticMoments {
  std::vector<double> state_sq;
  std::vector<double> err_sq;
  std::vector<double> post_var_trace;
};
std::optional<AnalyticMoments> analytic_kalman_moments(const LoopConfig& cfg);

/// Default thresholds: 10x the analytic Kalman tail level when the closed loop
/// is stable and the model is linear-Gaussian, else 10x the initial second moment.
Thresholds default_thresholds(const LoopConfig& cfg, int tail_window);

/// max_t |z_{t+1} - A_cl z_t - B_u K (z_ctrl_t - z_t)|
double certainty_equivalence_residual(const RunRecord& run, const ModeDecompositiond& decomp, const MatrixXd& K);

/// Minkowski envelope sqrt(E||z_t||^2) <= ||A_cl^t|| sqrt(E||z_0||^2) + g sqrt(max_{j<t} E||e_j||^2)
/// with g = sum_j ||A_cl^j|| ||B_u K||, evaluated on the empirical ensemble.
struct IssCheck {
  double gain = 0.0;
  double worst_ratio = 0.0;  // max_t E||z_t||^2 / envelope_t
  bool holds = true;
};
IssCheck iss_check(const std::vector<RunRecord>& runs, const ModeDecompositiond& decomp, const MatrixXd& K);

}  // namespace slc
