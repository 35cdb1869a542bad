#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slc/channel.hpp"
#include "slc/info.hpp"
#include "slc/prior.hpp"
#include "slc/system.hpp"

namespace slc {

/// Realized closed-loop data in modal coordinates. u[t] is the input applied
/// between t and t+1; y[t] is observed at t.
struct Trajectory {
  std::vector<VectorXd> z_u;
  std::vector<VectorXd> z_s;
  std::vector<VectorXd> y;
  std::vector<VectorXd> u;
  /// Filter posterior mean and covariance per step; only needed for scans.
  std::vector<VectorXd> z_hat;
  std::vector<MatrixXd> post_cov;
  int length() const { return static_cast<int>(y.size()); }
};

/// Where Hessians are evaluated. With radius_std = 0 only the true state is
/// used; otherwise also a grid of points z_hat + chol(post_cov) d with
/// |d_i| <= radius_std, which covers the region the posterior occupies.
struct HessianScan {
  double radius_std = 0.0;
  int points = 41;
};

struct Witness {
  int t = -1;
  VectorXd eigenvalues;
  VectorXd z;  // unstable state the Hessian was evaluated at
};

struct CurvatureAudit {
  AuditStatus verdict = AuditStatus::kNotApplicable;
  int window = 1;
  /// min over windows of -lambda_max(windowed pulled-back Hessian sum)
  double alpha_hat = 0.0;
  std::vector<double> lambda_max;  // per window end t = L-1, L, ...
  std::optional<Witness> witness;   // worst window
  std::string detail;
};

CurvatureAudit audit_assumption1(const ChannelModel& ch, const ModeDecompositiond& decomp,
                                 const Trajectory& traj, int window, const HessianScan& scan = {});

struct PriorCurvatureAudit {
  AuditStatus verdict = AuditStatus::kPass;
  /// smallest beta with prior Hessian <= beta I (0 when the Hessian is negative semidefinite)
  double beta_hat = 0.0;
  std::optional<VectorXd> argmax;
  std::string detail;
};

/// Gaussian: closed form. Student-t: scan of the per-coordinate second
/// derivative over +-`scan_halfwidth` scales.
PriorCurvatureAudit audit_assumption2(const Prior& prior, double scan_halfwidth = 50.0, int scan_points = 20001);

struct ConditioningAudit {
  AuditStatus verdict = AuditStatus::kPass;
  double kappa_hat = 1.0;
  double kappa_cap = 1e6;
  /// first t with cond > cap (fail) or argmax otherwise
  int witness_t = -1;
};

ConditioningAudit audit_assumption3(const std::vector<double>& cond_numbers, double kappa_cap = 1e6);

struct SpectralBoundProbe {
  MatrixXd lhs;   // V^T Omega_t V
  MatrixXd rhs;   // beta s_max^2 (J^t)^T J^t - alpha s_min^2 sum_j (J^{jL})^T J^{jL}
  int t = 0;
  int N_t = 0;
  double min_residual = 0.0;  // lambda_min(rhs - lhs)
  bool holds = true;
};

/// Omega_t = (A^-t)^T P A^-t - sum_{j=0}^{N_t-1} (A^-jL)^T Q_j A^-jL with
/// A^-1 = V J V^-1 and N_t = floor((t+1)/L). Needs Q.size() >= N_t.
SpectralBoundProbe lemma1_probe(const MatrixXd& P, const std::vector<MatrixXd>& Q, const MatrixXd& V,
                                const MatrixXd& J, int t, int L, double alpha, double beta,
                                double tolerance = 1e-8);

struct PosteriorCurvatureTrace {
  std::vector<double> lambda_max;      // of H_t, max over the scan
  std::vector<double> lambda_max_truth;  // of H_t at the true state
  std::vector<double> prior_norm;      // ||(A^-t)^T H_prior A^-t||
  std::vector<double> accumulated_norm;// ||sum_k pulled-back H_obs,k||
  std::vector<double> remainder_lambda_max;  // of R_t for a given window
  std::vector<MatrixXd> H;             // at the true state
  std::optional<int> first_negative_t;
  double c = 0.01;
};

/// H_t = (A_u^-t)^T H_prior (A_u^-t) + sum_k (A_u^-(t-k))^T H_obs,k (A_u^-(t-k))
/// evaluated along the trajectory. first_negative_t is the first t after which
/// lambda_max(H_s) <= -c for every remaining s, provided it leaves at least a
/// quarter of the horizon to confirm it.
PosteriorCurvatureTrace lemma2_accumulate(const ChannelModel& ch, const ModeDecompositiond& decomp,
                                          const UnstablePrior& prior, const Trajectory& traj,
                                          double c = 0.01, int window = 1, const HessianScan& scan = {});

}  // namespace slc
