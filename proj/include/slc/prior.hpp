#pragma once

#include <Eigen/Dense>

#include <string>

#include "slc/rng.hpp"
#include "slc/system.hpp"

namespace slc {

enum class PriorFamily { kGaussian, kStudentT };

PriorFamily prior_family_from_string(const std::string& name);
std::string to_string(PriorFamily family);

/// Density of the initial state x_0. Student-t is independent per coordinate
/// with common degrees of freedom and scale, located at `mean`.
class Prior {
 public:
  static Prior gaussian(VectorXd mean, MatrixXd covariance);
  static Prior student_t(VectorXd location, double dof, double scale);

  PriorFamily family() const { return family_; }
  Eigen::Index dim() const { return mean_.size(); }
  const VectorXd& mean() const { return mean_; }
  /// Covariance of x_0 (finite for Student-t only when dof > 2).
  MatrixXd covariance() const;
  double dof() const { return dof_; }
  double scale() const { return scale_; }

  VectorXd sample(RandomStream& rng) const;
  double log_density(const VectorXd& x) const;
  MatrixXd log_density_hessian(const VectorXd& x) const;
  /// E ||x_0||^2
  double second_moment() const;

 private:
  PriorFamily family_ = PriorFamily::kGaussian;
  VectorXd mean_;
  MatrixXd cov_;
  MatrixXd cov_chol_;
  MatrixXd cov_inv_;
  double log_norm_ = 0.0;
  double dof_ = 0.0;
  double scale_ = 1.0;
};

/// Prior of the unstable coordinates z_0^u = T_u x_0. Gaussian priors are
/// marginalized; other families need n_u = n so the change of variables is a
/// bijection.
class UnstablePrior {
 public:
  UnstablePrior(const Prior& prior, const ModeDecompositiond& decomp);

  Eigen::Index dim() const { return n_u_; }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& covariance() const { return cov_; }
  bool is_gaussian() const { return prior_.family() == PriorFamily::kGaussian; }
  double log_density(const VectorXd& z) const;
  MatrixXd log_density_hessian(const VectorXd& z) const;
  VectorXd sample(RandomStream& rng) const;
  /// Mean of the stable block, used as its nominal value by estimators.
  const VectorXd& stable_mean() const { return stable_mean_; }

 private:
  Prior prior_;
  Eigen::Index n_u_ = 0;
  VectorXd mean_;
  MatrixXd cov_;
  MatrixXd cov_inv_;
  double log_norm_ = 0.0;
  MatrixXd T_inv_;
  MatrixXd T_u_;
  MatrixXd cov_chol_;
  double log_abs_det_T_ = 0.0;
  VectorXd stable_mean_;
};

}  // namespace slc
