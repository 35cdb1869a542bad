#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "slc/linalg.hpp"
#include "slc/schur.hpp"

namespace slc {

/// Magnitudes within this distance of 1 are classified unstable.
inline constexpr double kUnitCircleTolerance = 1e-9;

template <typename Scalar>
bool is_unstable_eigenvalue(const std::complex<Scalar>& lambda) {
  return std::abs(lambda) >= Scalar(1) - Scalar(kUnitCircleTolerance);
}

/// Noiseless plant x_{t+1} = A x_t + B u_t.
template <typename Scalar>
class SystemModel {
 public:
  SystemModel(MatrixX<Scalar> A, MatrixX<Scalar> B, bool allow_stable = false)
      : A_(std::move(A)), B_(std::move(B)), allow_stable_(allow_stable) {
    if (A_.rows() == 0 || A_.rows() != A_.cols()) {
      fail(ErrorCode::kDimensionMismatch, "A must be a non-empty square matrix");
    }
    if (B_.rows() != A_.rows() || B_.cols() == 0) {
      fail(ErrorCode::kDimensionMismatch, "B must have n rows and at least one column");
    }
    if (!allow_stable_) {
      Eigen::EigenSolver<MatrixX<Scalar>> es(A_, false);
      if (es.info() != Eigen::Success) {
        fail(ErrorCode::kNonConvergentEigensolve, "eigenvalues of A");
      }
      bool any_unstable = false;
      for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        any_unstable = any_unstable || is_unstable_eigenvalue<Scalar>(es.eigenvalues()(i));
      }
      if (!any_unstable) {
        fail(ErrorCode::kStableSystem,
             "A has no eigenvalue with magnitude >= 1 (set allow_stable for baselines)");
      }
    }
  }

  const MatrixX<Scalar>& A() const { return A_; }
  const MatrixX<Scalar>& B() const { return B_; }
  Eigen::Index n() const { return A_.rows(); }
  Eigen::Index m() const { return B_.cols(); }
  bool allow_stable() const { return allow_stable_; }

 private:
  MatrixX<Scalar> A_;
  MatrixX<Scalar> B_;
  bool allow_stable_;
};

enum class TransformMethod { kPermutation, kOrderedSchur };

/// z = T x splits the state into [z^u; z^s] with T A T^{-1} = diag(A_u, A_s).
template <typename Scalar>
struct ModeDecomposition {
  MatrixX<Scalar> T;
  MatrixX<Scalar> T_inv;
  MatrixX<Scalar> A_u;
  MatrixX<Scalar> A_s;
  MatrixX<Scalar> B_u;
  MatrixX<Scalar> B_s;
  Eigen::Index n_u = 0;
  /// Ordered to match the blocks: unstable eigenvalues first.
  std::vector<std::complex<Scalar>> eigenvalues;
  /// Bits per step.
  Scalar r_exp = 0;
  Scalar transform_condition = 1;
  TransformMethod method = TransformMethod::kOrderedSchur;

  Eigen::Index n() const { return T.rows(); }
  Eigen::Index n_s() const { return n() - n_u; }

  VectorX<Scalar> unstable_part(const VectorX<Scalar>& x) const {
    return T.topRows(n_u) * x;
  }
  VectorX<Scalar> stable_part(const VectorX<Scalar>& x) const {
    return T.bottomRows(n_s()) * x;
  }
  /// x = T^{-1} [z^u; z^s]
  VectorX<Scalar> reconstruct(const VectorX<Scalar>& z_u, const VectorX<Scalar>& z_s) const {
    return T_inv.leftCols(n_u) * z_u + T_inv.rightCols(n_s()) * z_s;
  }
  bool strictly_unstable() const {
    return std::all_of(eigenvalues.begin(), eigenvalues.begin() + n_u,
                       [](const auto& l) { return std::abs(l) > Scalar(1) + Scalar(kUnitCircleTolerance); });
  }
};

struct DecompositionOptions {
  double condition_cap = 1e8;
};

namespace internal {

template <typename Scalar>
bool is_exactly_diagonal(const MatrixX<Scalar>& A) {
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      if (i != j && A(i, j) != Scalar(0)) return false;
    }
  }
  return true;
}

template <typename Scalar>
void finish_decomposition(const SystemModel<Scalar>& model, ModeDecomposition<Scalar>& d,
                          const MatrixX<Scalar>& Az, const DecompositionOptions& opts) {
  const Eigen::Index n = model.n();
  const Eigen::Index nu = d.n_u;
  d.A_u = Az.topLeftCorner(nu, nu);
  d.A_s = Az.bottomRightCorner(n - nu, n - nu);
  const MatrixX<Scalar> Bz = d.T * model.B();
  d.B_u = Bz.topRows(nu);
  d.B_s = Bz.bottomRows(n - nu);
  d.transform_condition = condition_number(d.T);
  if (!(d.transform_condition <= Scalar(opts.condition_cap))) {
    fail(ErrorCode::kIllConditionedTransform,
         "cond(T) = " + std::to_string(static_cast<double>(d.transform_condition)) +
             " exceeds cap " + std::to_string(opts.condition_cap));
  }
  Scalar r = 0;
  for (Eigen::Index i = 0; i < nu; ++i) r += std::log2(std::abs(d.eigenvalues[i]));
  d.r_exp = std::max(r, Scalar(0));
}

}  // namespace internal

/// Stable/unstable split of A. Exactly diagonal inputs use a permutation;
/// everything else goes through an ordered real Schur form followed by a
/// Sylvester solve that removes the coupling block.
template <typename Scalar>
ModeDecomposition<Scalar> decompose(const SystemModel<Scalar>& model,
                                    const DecompositionOptions& opts = {}) {
  const MatrixX<Scalar>& A = model.A();
  const Eigen::Index n = model.n();
  ModeDecomposition<Scalar> d;

  if (internal::is_exactly_diagonal(A)) {
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < n; ++i)
      if (is_unstable_eigenvalue<Scalar>({A(i, i), 0})) order.push_back(i);
    d.n_u = static_cast<Eigen::Index>(order.size());
    for (Eigen::Index i = 0; i < n; ++i)
      if (!is_unstable_eigenvalue<Scalar>({A(i, i), 0})) order.push_back(i);
    d.T = MatrixX<Scalar>::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      d.T(k, order[k]) = Scalar(1);
      d.eigenvalues.emplace_back(A(order[k], order[k]), Scalar(0));
    }
    d.T_inv = d.T.transpose();
    d.method = TransformMethod::kPermutation;
    internal::finish_decomposition(model, d, MatrixX<Scalar>(d.T * A * d.T_inv), opts);
    return d;
  }

  auto leading = [](const std::vector<std::complex<Scalar>>& eig) {
    return is_unstable_eigenvalue(eig.front());
  };
  RealSchurForm<Scalar> form = ordered_real_schur<Scalar>(A, leading);
  for (const SchurBlock& b : schur_blocks(form.S)) {
    for (const auto& l : block_eigenvalues(form.S, b)) {
      d.eigenvalues.push_back(l);
      if (is_unstable_eigenvalue(l)) d.n_u += 1;
    }
  }
  const Eigen::Index nu = d.n_u;
  const Eigen::Index ns = n - nu;
  // S11 X - X S22 = -S12 makes Y^{-1} S Y block diagonal with Y = [[I, X], [0, I]].
  MatrixX<Scalar> Y = MatrixX<Scalar>::Identity(n, n);
  MatrixX<Scalar> Y_inv = MatrixX<Scalar>::Identity(n, n);
  if (nu > 0 && ns > 0) {
    const MatrixX<Scalar> X = solve_sylvester<Scalar>(
        form.S.topLeftCorner(nu, nu), form.S.bottomRightCorner(ns, ns),
        MatrixX<Scalar>(-form.S.topRightCorner(nu, ns)));
    Y.topRightCorner(nu, ns) = X;
    Y_inv.topRightCorner(nu, ns) = -X;
  }
  d.T = Y_inv * form.U.transpose();
  d.T_inv = form.U * Y;
  d.method = TransformMethod::kOrderedSchur;
  MatrixX<Scalar> Az = Y_inv * form.S * Y;
  if (nu > 0 && ns > 0) {
    Az.topRightCorner(nu, ns).setZero();
    Az.bottomLeftCorner(ns, nu).setZero();
  }
  internal::finish_decomposition(model, d, Az, opts);
  return d;
}

template <typename Scalar>
Scalar expansion_rate(const SystemModel<Scalar>& model, const DecompositionOptions& opts = {}) {
  return decompose(model, opts).r_exp;
}

template <typename Scalar, typename DerivedX, typename DerivedU>
VectorX<Scalar> step_dynamics(const SystemModel<Scalar>& model,
                              const Eigen::MatrixBase<DerivedX>& x,
                              const Eigen::MatrixBase<DerivedU>& u) {
  if (x.size() != model.n() || u.size() != model.m()) {
    fail(ErrorCode::kDimensionMismatch, "state/control size does not match the plant");
  }
  return model.A() * x + model.B() * u;
}

enum class GainMethod { kQuadraticRegulator, kDeadbeat, kPolePlacement };

struct GainDesign {
  GainMethod method = GainMethod::kQuadraticRegulator;
  /// Closed-loop poles for kPolePlacement; complex values must come in conjugate pairs.
  std::vector<std::complex<double>> poles;
  /// Empty means identity weights.
  MatrixXd state_weight;
  MatrixXd input_weight;
  int max_iterations = 200;
  double tolerance = 1e-11;
};

/// u = K z^u with rho(A_u + B_u K) < 1.
template <typename Scalar>
struct FeedbackGain {
  MatrixX<Scalar> K;
  Scalar closed_loop_spectral_radius = 0;
};

namespace internal {

// Ackermann's formula for a single input: K = -e_n^T C^{-1} phi(A).
template <typename Scalar>
MatrixX<Scalar> ackermann(const MatrixX<Scalar>& A, const MatrixX<Scalar>& b,
                          const std::vector<std::complex<double>>& poles) {
  const Eigen::Index n = A.rows();
  using C = std::complex<Scalar>;
  MatrixX<C> phi = MatrixX<C>::Identity(n, n);
  const MatrixX<C> Ac = A.template cast<C>();
  for (const auto& p : poles) {
    phi = phi * (Ac - C(Scalar(p.real()), Scalar(p.imag())) * MatrixX<C>::Identity(n, n));
  }
  const MatrixX<Scalar> ctrb = controllability_matrix<Scalar>(A, b);
  MatrixX<Scalar> e_n = MatrixX<Scalar>::Zero(1, n);
  e_n(0, n - 1) = Scalar(1);
  const MatrixX<Scalar> row = ctrb.transpose().fullPivLu().solve(e_n.transpose()).transpose();
  return -(row * phi.real());
}

}  // namespace internal

template <typename Scalar>
FeedbackGain<Scalar> design_gain(const ModeDecomposition<Scalar>& decomp,
                                 const GainDesign& spec = {}) {
  const MatrixX<Scalar>& A = decomp.A_u;
  const MatrixX<Scalar>& B = decomp.B_u;
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  FeedbackGain<Scalar> gain;
  if (n == 0) {
    gain.K = MatrixX<Scalar>::Zero(m, 0);
    return gain;
  }
  if (!is_controllable<Scalar>(A, B)) {
    fail(ErrorCode::kNotStabilizable, "(A_u, B_u) fails the controllability rank test");
  }

  switch (spec.method) {
    case GainMethod::kDeadbeat:
    case GainMethod::kPolePlacement: {
      std::vector<std::complex<double>> poles = spec.poles;
      if (spec.method == GainMethod::kDeadbeat) poles.assign(n, {0.0, 0.0});
      if (static_cast<Eigen::Index>(poles.size()) != n) {
        fail(ErrorCode::kPreconditionViolated, "need exactly n_u closed-loop poles");
      }
      if (m == 1) {
        gain.K = internal::ackermann<Scalar>(A, B, poles);
      } else if (spec.method == GainMethod::kDeadbeat && m == n &&
                 B.fullPivLu().isInvertible()) {
        gain.K = -B.fullPivLu().solve(A);
      } else {
        fail(ErrorCode::kPreconditionViolated,
             "pole placement supports single-input pairs (deadbeat also square B_u)");
      }
      break;
    }
    case GainMethod::kQuadraticRegulator: {
      const MatrixX<Scalar> Q = spec.state_weight.size() == 0
                                    ? MatrixX<Scalar>::Identity(n, n)
                                    : MatrixX<Scalar>(spec.state_weight.template cast<Scalar>());
      const MatrixX<Scalar> R = spec.input_weight.size() == 0
                                    ? MatrixX<Scalar>::Identity(m, m)
                                    : MatrixX<Scalar>(spec.input_weight.template cast<Scalar>());
      if (Q.rows() != n || R.rows() != m) {
        fail(ErrorCode::kDimensionMismatch, "regulator weight shapes");
      }
      // Structure-preserving doubling for the discrete algebraic Riccati equation.
      const MatrixX<Scalar> I = MatrixX<Scalar>::Identity(n, n);
      MatrixX<Scalar> Ak = A;
      MatrixX<Scalar> Gk = B * R.ldlt().solve(B.transpose());
      MatrixX<Scalar> P = Q;
      bool converged = false;
      for (int it = 0; it < spec.max_iterations; ++it) {
        const Eigen::PartialPivLU<MatrixX<Scalar>> W(I + Gk * P);
        const MatrixX<Scalar> WA = W.solve(Ak);
        const MatrixX<Scalar> WG = W.solve(Gk);
        MatrixX<Scalar> next = P + Ak.transpose() * P * WA;
        next = (next + next.transpose()) / Scalar(2);
        Gk = Gk + Ak * WG * Ak.transpose();
        Gk = (Gk + Gk.transpose()) / Scalar(2);
        Ak = Ak * WA;
        if (!next.allFinite()) break;
        const Scalar change = (next - P).norm() / std::max(Scalar(1), next.norm());
        P = std::move(next);
        if (change < Scalar(spec.tolerance)) {
          converged = true;
          break;
        }
      }
      if (!converged) {
        fail(ErrorCode::kRiccatiDivergence, "regulator Riccati iteration hit its iteration cap");
      }
      const MatrixX<Scalar> S = R + B.transpose() * P * B;
      gain.K = -S.ldlt().solve(MatrixX<Scalar>(B.transpose() * P * A));
      break;
    }
  }
  gain.closed_loop_spectral_radius = spectral_radius(MatrixX<Scalar>(A + B * gain.K));
  if (!(gain.closed_loop_spectral_radius < Scalar(1))) {
    fail(spec.method == GainMethod::kQuadraticRegulator ? ErrorCode::kRiccatiDivergence
                                                         : ErrorCode::kPreconditionViolated,
         "designed gain does not stabilize A_u");
  }
  return gain;
}

using SystemModeld = SystemModel<double>;
using ModeDecompositiond = ModeDecomposition<double>;
using FeedbackGaind = FeedbackGain<double>;

}  // namespace slc
