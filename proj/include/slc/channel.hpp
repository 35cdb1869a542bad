#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "slc/error.hpp"
#include "slc/rng.hpp"
#include "slc/system.hpp"

namespace slc {

enum class ChannelKind { kLinearGaussian, kTanhGaussian, kCubicGaussian, kSignQuantizer, kModuloGaussian };
enum class Smoothness { kC2, kNonSmooth };
enum class Support { kContinuous, kDiscrete };

std::string to_string(ChannelKind kind);
ChannelKind channel_kind_from_string(const std::string& name);

/// Memoryless observation law p(y | x). Gaussian-noise kinds observe
/// y = g(C x) + v with v ~ N(0, R) and g applied per component:
///   linear  g(s) = s
///   tanh    g(s) = tanh(scale * s)
///   cubic   g(s) = s^3
/// The modulo kind returns (C x + v) mod period per component (R diagonal),
/// and the sign quantizer maps each component of C x to one of `levels`
/// odd-integer codes {-(L-1), ..., -1, 1, ..., L-1} (codes step by 2) with
/// thresholds spaced `step` apart around 0.
class ChannelModel {
 public:
  static ChannelModel linear_gaussian(MatrixXd C, MatrixXd R);
  static ChannelModel tanh_gaussian(double scale, MatrixXd R, MatrixXd C = {});
  static ChannelModel cubic_gaussian(MatrixXd R, MatrixXd C = {});
  static ChannelModel sign_quantizer(MatrixXd C, int levels = 2, double step = 1.0);
  static ChannelModel modulo_gaussian(double period, MatrixXd R, MatrixXd C = {});

  ChannelKind kind() const { return kind_; }
  Eigen::Index obs_dim() const { return C_.rows(); }
  Eigen::Index state_dim() const { return C_.cols(); }
  Smoothness smoothness() const {
    return kind_ == ChannelKind::kSignQuantizer ? Smoothness::kNonSmooth : Smoothness::kC2;
  }
  Support support() const {
    return kind_ == ChannelKind::kSignQuantizer ? Support::kDiscrete : Support::kContinuous;
  }
  bool has_noise() const { return kind_ != ChannelKind::kSignQuantizer; }

  const MatrixXd& C() const { return C_; }
  const MatrixXd& R() const { return R_; }
  double scale() const { return scale_; }
  double period() const { return period_; }
  int levels() const { return levels_; }
  double step() const { return step_; }

  /// Same law with noise covariance multiplied by `factor` (time-varying schedules).
  ChannelModel with_noise_scale(double factor) const;

  // cached factorization of R
  const MatrixXd& R_inverse() const { return R_inv_; }
  const MatrixXd& R_cholesky() const { return R_chol_; }
  double log_det_2pi_R() const { return log_det_2pi_R_; }

 private:
  ChannelModel() = default;
  void finalize();

  ChannelKind kind_ = ChannelKind::kLinearGaussian;
  MatrixXd C_;
  MatrixXd R_;
  double scale_ = 1.0;
  double period_ = 1.0;
  int levels_ = 2;
  double step_ = 1.0;
  MatrixXd R_inv_;
  MatrixXd R_chol_;
  double log_det_2pi_R_ = 0.0;
};

enum class Derivatives { kNone, kGradient, kHessian };

/// Log-likelihood in nats with optional state derivatives.
struct LikelihoodEval {
  double loglik = 0.0;
  std::optional<VectorXd> grad;
  std::optional<MatrixXd> hessian;
};

VectorXd sample(const ChannelModel& ch, const VectorXd& x, RandomStream& rng);

LikelihoodEval log_likelihood(const ChannelModel& ch, const VectorXd& y, const VectorXd& x,
                              Derivatives want = Derivatives::kNone);

/// Shorthand for the value only.
double log_likelihood_value(const ChannelModel& ch, const VectorXd& y, const VectorXd& x);

/// Output code of a discrete channel at x (noiseless quantizer).
VectorXd quantize(const ChannelModel& ch, const VectorXd& x);

/// Hessian of log p(y_k | z_k^u) with respect to z_t^u, where z_k^u is
/// recovered from z_t^u by inverse dynamics and the recorded inputs u_k..u_{t-1}.
/// `stable_k` is the stable block at time k used to rebuild x_k.
MatrixXd pulled_back_hessian(const ChannelModel& ch, const ModeDecompositiond& decomp,
                             const VectorXd& y_k, int k, int t, const VectorXd& z_t,
                             const std::vector<VectorXd>& inputs, const VectorXd& stable_k);

/// z_k^u from z_t^u via inverse dynamics (k <= t).
VectorXd rewind_unstable_state(const ModeDecompositiond& decomp, int k, int t,
                               const VectorXd& z_t, const std::vector<VectorXd>& inputs);

}  // namespace slc
