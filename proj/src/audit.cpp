#include "slc/audit.hpp"

#include <algorithm>
#include <cmath>

#include "slc/error.hpp"

namespace slc {

namespace {

MatrixXd unstable_hessian(const ChannelModel& ch, const ModeDecompositiond& decomp, const VectorXd& y,
                          const VectorXd& z_u, const VectorXd& z_s) {
  const VectorXd zs = z_s.size() == decomp.n_s() ? z_s : VectorXd::Zero(decomp.n_s());
  const MatrixXd Hx = *log_likelihood(ch, y, decomp.reconstruct(z_u, zs), Derivatives::kHessian).hessian;
  const MatrixXd Tu = decomp.T_inv.leftCols(decomp.n_u);
  MatrixXd H = Tu.transpose() * Hx * Tu;
  return (H + H.transpose()) / 2.0;
}

VectorXd stable_at(const Trajectory& traj, int k) {
  return k < static_cast<int>(traj.z_s.size()) ? traj.z_s[k] : VectorXd();
}

std::vector<VectorXd> scan_offsets(Eigen::Index n, const HessianScan& scan) {
  std::vector<VectorXd> out;
  const int p = std::max(2, scan.points);
  auto coord = [&](int i, int count) { return scan.radius_std * (2.0 * i / (count - 1) - 1.0); };
  if (n == 1) {
    for (int i = 0; i < p; ++i) out.push_back(VectorXd::Constant(1, coord(i, p)));
  } else if (n == 2) {
    const int q = std::max(2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p)))));
    for (int i = 0; i < q; ++i) {
      for (int j = 0; j < q; ++j) out.push_back((VectorXd(2) << coord(i, q), coord(j, q)).finished());
    }
  } else {
    for (Eigen::Index a = 0; a < n; ++a) {
      for (int i = 0; i < p; ++i) {
        VectorXd d = VectorXd::Zero(n);
        d(a) = coord(i, p);
        out.push_back(d);
      }
    }
  }
  return out;
}

// Evaluation points for the window ending at t: the true state first.
std::vector<VectorXd> scan_points(const Trajectory& traj, int t, const HessianScan& scan) {
  std::vector<VectorXd> pts{traj.z_u[t]};
  if (scan.radius_std <= 0 || t >= static_cast<int>(traj.post_cov.size()) ||
      t >= static_cast<int>(traj.z_hat.size())) {
    return pts;
  }
  const MatrixXd& S = traj.post_cov[t];
  Eigen::SelfAdjointEigenSolver<MatrixXd> es((S + S.transpose()) / 2.0);
  const MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  for (const VectorXd& d : scan_offsets(S.rows(), scan)) pts.push_back(traj.z_hat[t] + root * d);
  return pts;
}

// sum_{k=from}^{t} (A^-(t-k))^T H_k(z_k) A^-(t-k) with z_k rewound from z_t,
// plus the pulled-back prior term when with_prior.
MatrixXd pulled_back_sum(const ChannelModel& ch, const ModeDecompositiond& decomp, const MatrixXd& A_inv,
                         const Trajectory& traj, int from, int t, const VectorXd& z_t,
                         const UnstablePrior* prior) {
  const Eigen::Index nu = decomp.n_u;
  MatrixXd sum = MatrixXd::Zero(nu, nu);
  MatrixXd M = MatrixXd::Identity(nu, nu);
  VectorXd z = z_t;
  for (int k = t; k >= from; --k) {
    sum += M.transpose() * unstable_hessian(ch, decomp, traj.y[k], z, stable_at(traj, k)) * M;
    if (k > 0 && (k > from || prior)) {
      z = A_inv * (z - decomp.B_u * traj.u[k - 1]);
      M = A_inv * M;
    }
  }
  if (prior) sum += M.transpose() * prior->log_density_hessian(z) * M;
  return (sum + sum.transpose()) / 2.0;
}

}  // namespace

CurvatureAudit audit_assumption1(const ChannelModel& ch, const ModeDecompositiond& decomp,
                                 const Trajectory& traj, int window, const HessianScan& scan) {
  CurvatureAudit a;
  a.window = window;
  if (window < 1) fail(ErrorCode::kPreconditionViolated, "window must be >= 1");
  if (ch.smoothness() != Smoothness::kC2) {
    a.detail = to_string(ch.kind()) + " log-likelihood is not C2";
    return a;
  }
  if (decomp.n_u == 0) {
    a.detail = "no unstable modes";
    return a;
  }
  if (traj.length() < window) fail(ErrorCode::kPreconditionViolated, "trajectory shorter than window");
  const MatrixXd A_inv = Eigen::PartialPivLU<MatrixXd>(decomp.A_u).inverse();
  a.alpha_hat = INFINITY;
  for (int t = window - 1; t < traj.length(); ++t) {
    double worst = -INFINITY;
    for (const VectorXd& z : scan_points(traj, t, scan)) {
      const VectorXd ev = symmetric_eigenvalues(pulled_back_sum(ch, decomp, A_inv, traj, t - window + 1, t, z, nullptr));
      worst = std::max(worst, ev.maxCoeff());
      if (-ev.maxCoeff() < a.alpha_hat) {
        a.alpha_hat = -ev.maxCoeff();
        a.witness = Witness{t, ev, z};
      }
    }
    a.lambda_max.push_back(worst);
  }
  a.verdict = a.alpha_hat > 0 ? AuditStatus::kPass : AuditStatus::kFail;
  if (a.verdict == AuditStatus::kFail) {
    a.detail = "windowed Hessian sum has eigenvalue " + std::to_string(-a.alpha_hat) + " >= 0 at t = " +
               std::to_string(a.witness->t);
  }
  return a;
}

PriorCurvatureAudit audit_assumption2(const Prior& prior, double scan_halfwidth, int scan_points) {
  PriorCurvatureAudit a;
  if (prior.family() == PriorFamily::kGaussian) {
    // Hessian is -Sigma^-1, negative definite everywhere
    a.beta_hat = 0.0;
    a.verdict = AuditStatus::kPass;
    return a;
  }
  // independent coordinates: scan one coordinate, others at the location
  const Eigen::Index n = prior.dim();
  a.beta_hat = -INFINITY;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int s = 0; s < scan_points; ++s) {
      VectorXd x = prior.mean();
      x(i) += prior.scale() * scan_halfwidth * (2.0 * s / (scan_points - 1) - 1.0);
      const double h = symmetric_eigenvalues(prior.log_density_hessian(x)).maxCoeff();
      if (h > a.beta_hat) {
        a.beta_hat = h;
        a.argmax = x;
      }
    }
  }
  a.beta_hat = std::max(a.beta_hat, 0.0);
  a.verdict = std::isfinite(a.beta_hat) ? AuditStatus::kPass : AuditStatus::kFail;
  return a;
}

ConditioningAudit audit_assumption3(const std::vector<double>& cond_numbers, double kappa_cap) {
  ConditioningAudit a;
  a.kappa_cap = kappa_cap;
  for (int t = 0; t < static_cast<int>(cond_numbers.size()); ++t) {
    const double k = cond_numbers[t];
    if (a.witness_t < 0 || k > a.kappa_hat) {
      a.kappa_hat = k;
      if (a.verdict == AuditStatus::kPass) a.witness_t = t;
    }
    if (!(k <= kappa_cap) && a.verdict == AuditStatus::kPass) {
      a.verdict = AuditStatus::kFail;
      a.witness_t = t;
    }
  }
  return a;
}

SpectralBoundProbe lemma1_probe(const MatrixXd& P, const std::vector<MatrixXd>& Q, const MatrixXd& V,
                                const MatrixXd& J, int t, int L, double alpha, double beta, double tolerance) {
  const Eigen::Index n = J.rows();
  if (P.rows() != n || V.rows() != n || V.cols() != n || J.cols() != n) {
    fail(ErrorCode::kDimensionMismatch, "lemma1_probe: shapes");
  }
  if (t < 0 || L < 1) fail(ErrorCode::kPreconditionViolated, "lemma1_probe: need t >= 0, L >= 1");
  SpectralBoundProbe p;
  p.t = t;
  p.N_t = (t + 1) / L;
  if (static_cast<int>(Q.size()) < p.N_t) {
    fail(ErrorCode::kPreconditionViolated, "lemma1_probe: need N_t = " + std::to_string(p.N_t) + " Q matrices");
  }
  const double cap_tol = 1e-10 * std::max(1.0, std::abs(beta));
  if (symmetric_eigenvalues(P).maxCoeff() > beta + cap_tol) {
    fail(ErrorCode::kPreconditionViolated, "lemma1_probe: P exceeds beta I");
  }
  for (int j = 0; j < p.N_t; ++j) {
    if (symmetric_eigenvalues(Q[j]).minCoeff() < alpha - 1e-10 * std::max(1.0, alpha)) {
      fail(ErrorCode::kPreconditionViolated, "lemma1_probe: Q_" + std::to_string(j) + " below alpha I");
    }
  }
  const MatrixXd V_inv = V.inverse();
  const MatrixXd A_inv = V * J * V_inv;
  const MatrixXd At = matrix_power<double>(A_inv, t);
  MatrixXd omega = At.transpose() * P * At;
  const Eigen::JacobiSVD<MatrixXd> svd(V);
  const double smax = svd.singularValues().maxCoeff(), smin = svd.singularValues().minCoeff();
  const MatrixXd Jt = matrix_power<double>(J, t);
  p.rhs = beta * smax * smax * Jt.transpose() * Jt;
  for (int j = 0; j < p.N_t; ++j) {
    const MatrixXd Aj = matrix_power<double>(A_inv, j * L);
    const MatrixXd Jj = matrix_power<double>(J, j * L);
    omega -= Aj.transpose() * Q[j] * Aj;
    p.rhs -= alpha * smin * smin * Jj.transpose() * Jj;
  }
  p.lhs = V.transpose() * omega * V;
  p.lhs = (p.lhs + p.lhs.transpose()) / 2.0;
  const MatrixXd gap = p.rhs - p.lhs;
  p.min_residual = symmetric_eigenvalues((gap + gap.transpose()) / 2.0).minCoeff();
  p.holds = p.min_residual >= -tolerance;
  return p;
}

PosteriorCurvatureTrace lemma2_accumulate(const ChannelModel& ch, const ModeDecompositiond& decomp,
                                          const UnstablePrior& prior, const Trajectory& traj, double c,
                                          int window, const HessianScan& scan) {
  if (decomp.n_u == 0 || !decomp.strictly_unstable()) {
    fail(ErrorCode::kPreconditionViolated, "posterior curvature accumulation needs strictly unstable A_u");
  }
  if (ch.smoothness() != Smoothness::kC2) {
    fail(ErrorCode::kUnsupportedDerivative, to_string(ch.kind()) + " log-likelihood is not C2");
  }
  if (window < 1) fail(ErrorCode::kPreconditionViolated, "window must be >= 1");
  PosteriorCurvatureTrace out;
  out.c = c;
  const Eigen::Index nu = decomp.n_u;
  const Eigen::PartialPivLU<MatrixXd> lu(decomp.A_u);
  const MatrixXd A_inv = lu.inverse();
  const MatrixXd H_prior = prior.log_density_hessian(traj.z_u.front());
  // pulled-back observation terms, stored as unstable-coordinate Hessians at their own times
  std::vector<MatrixXd> H_obs;
  for (int k = 0; k < traj.length(); ++k) {
    H_obs.push_back(unstable_hessian(ch, decomp, traj.y[k], traj.z_u[k], stable_at(traj, k)));
  }
  MatrixXd M = MatrixXd::Identity(nu, nu);               // A^-t
  MatrixXd accumulated = MatrixXd::Zero(nu, nu);
  for (int t = 0; t < traj.length(); ++t) {
    if (t > 0) M = A_inv * M;
    // accumulated_t = A^-T accumulated_{t-1} A^-1 + H_obs,t
    accumulated = A_inv.transpose() * accumulated * A_inv + H_obs[t];
    const MatrixXd prior_term = M.transpose() * H_prior * M;
    MatrixXd H = prior_term + accumulated;
    H = (H + H.transpose()) / 2.0;
    out.lambda_max_truth.push_back(symmetric_eigenvalues(H).maxCoeff());
    double worst = out.lambda_max_truth.back();
    const auto pts = scan_points(traj, t, scan);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const MatrixXd Hz = pulled_back_sum(ch, decomp, A_inv, traj, 0, t, pts[i], &prior);
      worst = std::max(worst, symmetric_eigenvalues(Hz).maxCoeff());
    }
    out.lambda_max.push_back(worst);
    out.prior_norm.push_back(prior_term.norm());
    out.accumulated_norm.push_back(accumulated.norm());
    // remainder over the initial steps k = 0..t - N_t L
    const int N_t = (t + 1) / window;
    const int last = t - N_t * window;
    MatrixXd R = MatrixXd::Zero(nu, nu);
    MatrixXd Mk = matrix_power<double>(A_inv, t);
    for (int k = 0; k <= last; ++k) {
      R += Mk.transpose() * H_obs[k] * Mk;
      Mk = decomp.A_u * Mk;
    }
    out.remainder_lambda_max.push_back(last >= 0 ? symmetric_eigenvalues((R + R.transpose()) / 2.0).maxCoeff() : 0.0);
    out.H.push_back(H);
  }
  const int horizon = traj.length();
  const int latest = horizon - std::max(1, horizon / 4);
  int candidate = -1;
  for (int t = horizon - 1; t >= 0; --t) {
    if (out.lambda_max[t] <= -c) {
      candidate = t;
    } else {
      break;
    }
  }
  if (candidate >= 0 && candidate <= latest) out.first_negative_t = candidate;
  return out;
}

}  // namespace slc
