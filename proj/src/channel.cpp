#include "slc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace slc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_spd(const MatrixXd& R, const char* what) {
  if (R.rows() == 0 || R.rows() != R.cols()) {
    fail(ErrorCode::kValidationError, std::string(what) + ": R must be square and non-empty");
  }
  if (!R.isApprox(R.transpose(), 1e-12)) {
    fail(ErrorCode::kValidationError, std::string(what) + ": R must be symmetric");
  }
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kValidationError, std::string(what) + ": R must be positive definite");
  }
}

MatrixXd default_C(const MatrixXd& C, Eigen::Index p) {
  return C.size() == 0 ? MatrixXd::Identity(p, p) : C;
}

// Per-component nonlinearity of the Gaussian-noise channels: value, first and
// second derivative.
struct Nonlinearity {
  double g, dg, d2g;
};

Nonlinearity apply(const ChannelModel& ch, double s) {
  switch (ch.kind()) {
    case ChannelKind::kTanhGaussian: {
      const double th = std::tanh(ch.scale() * s);
      const double sech2 = 1.0 - th * th;
      return {th, ch.scale() * sech2, -2.0 * ch.scale() * ch.scale() * th * sech2};
    }
    case ChannelKind::kCubicGaussian:
      return {s * s * s, 3.0 * s * s, 6.0 * s};
    default:
      return {s, 1.0, 0.0};
  }
}

double positive_mod(double v, double period) {
  double r = std::fmod(v, period);
  if (r < 0) r += period;
  if (r >= period) r -= period;
  return r;
}

// log of the wrapped normal density at y for location s, with d/ds and d2/ds2.
struct WrappedNormal {
  double logf, d1, d2;
};

WrappedNormal wrapped_normal(double y, double s, double sigma, double period) {
  const double base = std::floor((y - s) / period);
  const int span = static_cast<int>(std::ceil(12.0 * sigma / period)) + 1;
  double max_e = kNegInf;
  std::vector<double> e, d;
  for (int k = -span; k <= span + 1; ++k) {
    const double dk = y - s - (base + k) * period;
    e.push_back(-0.5 * dk * dk / (sigma * sigma));
    d.push_back(dk);
    max_e = std::max(max_e, e.back());
  }
  double sw = 0.0, swd = 0.0, swd2 = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double w = std::exp(e[i] - max_e);
    sw += w;
    swd += w * d[i];
    swd2 += w * d[i] * d[i];
  }
  const double s2 = sigma * sigma;
  WrappedNormal out;
  out.logf = max_e + std::log(sw) - 0.5 * std::log(2.0 * std::numbers::pi * s2);
  const double mean_d = swd / sw;
  out.d1 = mean_d / s2;
  out.d2 = (swd2 / sw) / (s2 * s2) - 1.0 / s2 - out.d1 * out.d1;
  return out;
}

int quantizer_code(double s, int levels, double step) {
  int j = 0;
  for (int k = 1; k < levels; ++k) {
    if (s >= step * (k - levels / 2.0)) ++j;
  }
  return 2 * j - (levels - 1);
}

}  // namespace

std::string to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::kLinearGaussian: return "linear-gaussian";
    case ChannelKind::kTanhGaussian: return "tanh-gaussian";
    case ChannelKind::kCubicGaussian: return "cubic-gaussian";
    case ChannelKind::kSignQuantizer: return "sign-quantizer";
    case ChannelKind::kModuloGaussian: return "modulo-gaussian";
  }
  return "unknown";
}

ChannelKind channel_kind_from_string(const std::string& name) {
  for (auto k : {ChannelKind::kLinearGaussian, ChannelKind::kTanhGaussian,
                 ChannelKind::kCubicGaussian, ChannelKind::kSignQuantizer,
                 ChannelKind::kModuloGaussian}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::kValidationError, "unknown channel kind \"" + name + "\"");
}

ChannelModel ChannelModel::linear_gaussian(MatrixXd C, MatrixXd R) {
  ChannelModel ch;
  ch.kind_ = ChannelKind::kLinearGaussian;
  require_spd(R, "linear-gaussian");
  ch.C_ = default_C(C, R.rows());
  ch.R_ = std::move(R);
  ch.finalize();
  return ch;
}

ChannelModel ChannelModel::tanh_gaussian(double scale, MatrixXd R, MatrixXd C) {
  ChannelModel ch;
  ch.kind_ = ChannelKind::kTanhGaussian;
  require_spd(R, "tanh-gaussian");
  if (!(scale > 0)) fail(ErrorCode::kValidationError, "tanh-gaussian: scale must be positive");
  ch.scale_ = scale;
  ch.C_ = default_C(C, R.rows());
  ch.R_ = std::move(R);
  ch.finalize();
  return ch;
}

ChannelModel ChannelModel::cubic_gaussian(MatrixXd R, MatrixXd C) {
  ChannelModel ch;
  ch.kind_ = ChannelKind::kCubicGaussian;
  require_spd(R, "cubic-gaussian");
  ch.C_ = default_C(C, R.rows());
  ch.R_ = std::move(R);
  ch.finalize();
  return ch;
}

ChannelModel ChannelModel::sign_quantizer(MatrixXd C, int levels, double step) {
  ChannelModel ch;
  ch.kind_ = ChannelKind::kSignQuantizer;
  if (C.size() == 0) fail(ErrorCode::kValidationError, "sign-quantizer: C must be non-empty");
  if (levels < 2) fail(ErrorCode::kValidationError, "sign-quantizer: levels must be >= 2");
  if (!(step > 0)) fail(ErrorCode::kValidationError, "sign-quantizer: step must be positive");
  ch.C_ = std::move(C);
  ch.levels_ = levels;
  ch.step_ = step;
  ch.finalize();
  return ch;
}

ChannelModel ChannelModel::modulo_gaussian(double period, MatrixXd R, MatrixXd C) {
  ChannelModel ch;
  ch.kind_ = ChannelKind::kModuloGaussian;
  require_spd(R, "modulo-gaussian");
  if (!R.isDiagonal()) fail(ErrorCode::kValidationError, "modulo-gaussian: R must be diagonal");
  if (!(period > 0)) fail(ErrorCode::kValidationError, "modulo-gaussian: period must be positive");
  ch.period_ = period;
  ch.C_ = default_C(C, R.rows());
  ch.R_ = std::move(R);
  ch.finalize();
  return ch;
}

void ChannelModel::finalize() {
  if (has_noise() && R_.rows() != C_.rows()) {
    fail(ErrorCode::kDimensionMismatch, "channel: R must be p x p with p = rows(C)");
  }
  if (!has_noise()) return;
  Eigen::LLT<MatrixXd> llt(R_);
  R_chol_ = llt.matrixL();
  R_inv_ = llt.solve(MatrixXd::Identity(R_.rows(), R_.rows()));
  R_inv_ = (R_inv_ + R_inv_.transpose()) / 2.0;
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < R_chol_.rows(); ++i) log_det += 2.0 * std::log(R_chol_(i, i));
  log_det_2pi_R_ = log_det + static_cast<double>(R_.rows()) * std::log(2.0 * std::numbers::pi);
}

ChannelModel ChannelModel::with_noise_scale(double factor) const {
  if (!(factor > 0)) fail(ErrorCode::kValidationError, "noise scale factor must be positive");
  ChannelModel ch = *this;
  if (!has_noise()) return ch;
  ch.R_ = R_ * factor;
  ch.finalize();
  return ch;
}

VectorXd quantize(const ChannelModel& ch, const VectorXd& x) {
  if (ch.kind() != ChannelKind::kSignQuantizer) {
    fail(ErrorCode::kPreconditionViolated, "quantize on a continuous channel");
  }
  if (x.size() != ch.state_dim()) fail(ErrorCode::kDimensionMismatch, "quantize: state size");
  const VectorXd s = ch.C() * x;
  VectorXd y(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) y(i) = quantizer_code(s(i), ch.levels(), ch.step());
  return y;
}

VectorXd sample(const ChannelModel& ch, const VectorXd& x, RandomStream& rng) {
  if (x.size() != ch.state_dim()) fail(ErrorCode::kDimensionMismatch, "sample: state size");
  if (ch.kind() == ChannelKind::kSignQuantizer) return quantize(ch, x);
  const VectorXd s = ch.C() * x;
  const VectorXd v = ch.R_cholesky() * standard_normal(rng, s.size());
  VectorXd y(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (ch.kind() == ChannelKind::kModuloGaussian) {
      y(i) = positive_mod(s(i) + v(i), ch.period());
    } else {
      y(i) = apply(ch, s(i)).g + v(i);
    }
  }
  return y;
}

LikelihoodEval log_likelihood(const ChannelModel& ch, const VectorXd& y, const VectorXd& x,
                              Derivatives want) {
  if (x.size() != ch.state_dim() || y.size() != ch.obs_dim()) {
    fail(ErrorCode::kDimensionMismatch, "log_likelihood: observation/state size");
  }
  if (want != Derivatives::kNone && ch.smoothness() != Smoothness::kC2) {
    fail(ErrorCode::kUnsupportedDerivative, to_string(ch.kind()) + " is not twice differentiable");
  }
  const VectorXd s = ch.C() * x;
  const Eigen::Index p = s.size();
  LikelihoodEval out;

  switch (ch.kind()) {
    case ChannelKind::kSignQuantizer: {
      const VectorXd code = quantize(ch, x);
      out.loglik = (code - y).cwiseAbs().maxCoeff() == 0.0 ? 0.0 : kNegInf;
      return out;
    }
    case ChannelKind::kModuloGaussian: {
      VectorXd d1(p), d2(p);
      out.loglik = 0.0;
      for (Eigen::Index i = 0; i < p; ++i) {
        if (y(i) < 0 || y(i) >= ch.period()) {
          out.loglik = kNegInf;
          d1(i) = d2(i) = 0.0;
          continue;
        }
        const auto w = wrapped_normal(y(i), s(i), std::sqrt(ch.R()(i, i)), ch.period());
        out.loglik += w.logf;
        d1(i) = w.d1;
        d2(i) = w.d2;
      }
      if (want != Derivatives::kNone) out.grad = ch.C().transpose() * d1;
      if (want == Derivatives::kHessian) {
        MatrixXd H = ch.C().transpose() * d2.asDiagonal() * ch.C();
        out.hessian = (H + H.transpose()) / 2.0;
      }
      return out;
    }
    default:
      break;
  }

  VectorXd residual(p), dg(p), d2g(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const auto nl = apply(ch, s(i));
    residual(i) = y(i) - nl.g;
    dg(i) = nl.dg;
    d2g(i) = nl.d2g;
  }
  const VectorXd weighted = ch.R_inverse() * residual;
  out.loglik = -0.5 * residual.dot(weighted) - 0.5 * ch.log_det_2pi_R();
  if (want == Derivatives::kNone) return out;
  const MatrixXd J = dg.asDiagonal() * ch.C();
  out.grad = J.transpose() * weighted;
  if (want == Derivatives::kHessian) {
    MatrixXd H = -J.transpose() * ch.R_inverse() * J +
                 ch.C().transpose() * d2g.cwiseProduct(weighted).asDiagonal() * ch.C();
    out.hessian = (H + H.transpose()) / 2.0;
  }
  return out;
}

double log_likelihood_value(const ChannelModel& ch, const VectorXd& y, const VectorXd& x) {
  return log_likelihood(ch, y, x, Derivatives::kNone).loglik;
}

VectorXd rewind_unstable_state(const ModeDecompositiond& decomp, int k, int t,
                               const VectorXd& z_t, const std::vector<VectorXd>& inputs) {
  if (k > t) fail(ErrorCode::kPreconditionViolated, "rewind requires k <= t");
  if (static_cast<int>(inputs.size()) < t) {
    fail(ErrorCode::kMissingInputHistory,
         "need inputs u_0..u_" + std::to_string(t - 1) + ", have " + std::to_string(inputs.size()));
  }
  const Eigen::PartialPivLU<MatrixXd> lu(decomp.A_u);
  VectorXd z = z_t;
  for (int j = t - 1; j >= k; --j) z = lu.solve(VectorXd(z - decomp.B_u * inputs[j]));
  return z;
}

MatrixXd pulled_back_hessian(const ChannelModel& ch, const ModeDecompositiond& decomp,
                             const VectorXd& y_k, int k, int t, const VectorXd& z_t,
                             const std::vector<VectorXd>& inputs, const VectorXd& stable_k) {
  const VectorXd z_k = rewind_unstable_state(decomp, k, t, z_t, inputs);
  const VectorXd zs = stable_k.size() == decomp.n_s() ? stable_k : VectorXd::Zero(decomp.n_s());
  const VectorXd x_k = decomp.reconstruct(z_k, zs);
  const MatrixXd Hx = *log_likelihood(ch, y_k, x_k, Derivatives::kHessian).hessian;
  const MatrixXd Tu = decomp.T_inv.leftCols(decomp.n_u);
  const MatrixXd Hz = Tu.transpose() * Hx * Tu;
  const MatrixXd M = matrix_power<double>(decomp.A_u, -(t - k));
  MatrixXd out = M.transpose() * Hz * M;
  return (out + out.transpose()) / 2.0;
}

}  // namespace slc
