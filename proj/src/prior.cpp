#include "slc/prior.hpp"

#include <cmath>
#include <numbers>

namespace slc {

namespace {

double gaussian_log_norm(const MatrixXd& chol) {
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < chol.rows(); ++i) log_det += 2.0 * std::log(chol(i, i));
  return -0.5 * (log_det + static_cast<double>(chol.rows()) * std::log(2.0 * std::numbers::pi));
}

}  // namespace

PriorFamily prior_family_from_string(const std::string& name) {
  if (name == "gaussian") return PriorFamily::kGaussian;
  if (name == "student-t") return PriorFamily::kStudentT;
  fail(ErrorCode::kUnknownPriorFamily, "unknown prior family \"" + name + "\"");
}

std::string to_string(PriorFamily family) {
  return family == PriorFamily::kGaussian ? "gaussian" : "student-t";
}

Prior Prior::gaussian(VectorXd mean, MatrixXd covariance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size() || mean.size() == 0) {
    fail(ErrorCode::kDimensionMismatch, "gaussian prior: mean/covariance shapes");
  }
  Eigen::LLT<MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success || !covariance.isApprox(covariance.transpose(), 1e-12)) {
    fail(ErrorCode::kValidationError, "gaussian prior: covariance must be symmetric positive definite");
  }
  Prior p;
  p.family_ = PriorFamily::kGaussian;
  p.mean_ = std::move(mean);
  p.cov_ = std::move(covariance);
  p.cov_chol_ = llt.matrixL();
  p.cov_inv_ = llt.solve(MatrixXd::Identity(p.cov_.rows(), p.cov_.rows()));
  p.log_norm_ = gaussian_log_norm(p.cov_chol_);
  return p;
}

Prior Prior::student_t(VectorXd location, double dof, double scale) {
  if (location.size() == 0) fail(ErrorCode::kDimensionMismatch, "student-t prior: empty location");
  if (!(dof > 2.0)) fail(ErrorCode::kValidationError, "student-t prior: dof must exceed 2");
  if (!(scale > 0.0)) fail(ErrorCode::kValidationError, "student-t prior: scale must be positive");
  Prior p;
  p.family_ = PriorFamily::kStudentT;
  p.mean_ = std::move(location);
  p.dof_ = dof;
  p.scale_ = scale;
  p.log_norm_ = std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2) -
                0.5 * std::log(dof * std::numbers::pi) - std::log(scale);
  return p;
}

MatrixXd Prior::covariance() const {
  if (family_ == PriorFamily::kGaussian) return cov_;
  const double var = scale_ * scale_ * dof_ / (dof_ - 2.0);
  return var * MatrixXd::Identity(dim(), dim());
}

double Prior::second_moment() const { return covariance().trace() + mean_.squaredNorm(); }

VectorXd Prior::sample(RandomStream& rng) const {
  if (family_ == PriorFamily::kGaussian) return mean_ + cov_chol_ * standard_normal(rng, dim());
  std::student_t_distribution<double> t(dof_);
  VectorXd x(dim());
  for (Eigen::Index i = 0; i < dim(); ++i) x(i) = mean_(i) + scale_ * t(rng);
  return x;
}

double Prior::log_density(const VectorXd& x) const {
  const VectorXd d = x - mean_;
  if (family_ == PriorFamily::kGaussian) return log_norm_ - 0.5 * d.dot(cov_inv_ * d);
  double out = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double u = d(i) / scale_;
    out += log_norm_ - 0.5 * (dof_ + 1) * std::log1p(u * u / dof_);
  }
  return out;
}

MatrixXd Prior::log_density_hessian(const VectorXd& x) const {
  if (family_ == PriorFamily::kGaussian) return -cov_inv_;
  // d2/dx2 of -(v+1)/2 log(1 + x^2/(v s^2)) = -(v+1)(v s^2 - x^2)/(v s^2 + x^2)^2
  MatrixXd H = MatrixXd::Zero(dim(), dim());
  const double vs2 = dof_ * scale_ * scale_;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    const double d2 = (x(i) - mean_(i)) * (x(i) - mean_(i));
    H(i, i) = -(dof_ + 1) * (vs2 - d2) / ((vs2 + d2) * (vs2 + d2));
  }
  return H;
}

UnstablePrior::UnstablePrior(const Prior& prior, const ModeDecompositiond& decomp)
    : prior_(prior), n_u_(decomp.n_u) {
  if (prior.dim() != decomp.n()) {
    fail(ErrorCode::kDimensionMismatch, "prior dimension must equal the plant state dimension");
  }
  const MatrixXd Tu = decomp.T.topRows(n_u_);
  T_u_ = Tu;
  mean_ = Tu * prior.mean();
  stable_mean_ = decomp.T.bottomRows(decomp.n_s()) * prior.mean();
  if (n_u_ == 0) return;
  cov_ = Tu * prior.covariance() * Tu.transpose();
  cov_ = (cov_ + cov_.transpose()) / 2.0;
  if (prior.family() == PriorFamily::kGaussian) {
    Eigen::LLT<MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success) {
      fail(ErrorCode::kSingularCovariance, "unstable-block prior covariance is singular");
    }
    cov_inv_ = llt.solve(MatrixXd::Identity(n_u_, n_u_));
    cov_chol_ = llt.matrixL();
    log_norm_ = gaussian_log_norm(cov_chol_);
    return;
  }
  if (n_u_ != decomp.n()) {
    fail(ErrorCode::kPreconditionViolated,
         "non-Gaussian priors require every mode to be unstable (no closed-form marginal)");
  }
  T_inv_ = decomp.T_inv;
  log_abs_det_T_ = std::log(std::abs(decomp.T.determinant()));
}

double UnstablePrior::log_density(const VectorXd& z) const {
  if (is_gaussian()) {
    const VectorXd d = z - mean_;
    return log_norm_ - 0.5 * d.dot(cov_inv_ * d);
  }
  return prior_.log_density(T_inv_ * z) - log_abs_det_T_;
}

MatrixXd UnstablePrior::log_density_hessian(const VectorXd& z) const {
  if (is_gaussian()) return -cov_inv_;
  return T_inv_.transpose() * prior_.log_density_hessian(T_inv_ * z) * T_inv_;
}

VectorXd UnstablePrior::sample(RandomStream& rng) const {
  if (n_u_ == 0) return VectorXd(0);
  if (is_gaussian()) return mean_ + cov_chol_ * standard_normal(rng, n_u_);
  return T_u_ * prior_.sample(rng);
}

}  // namespace slc
