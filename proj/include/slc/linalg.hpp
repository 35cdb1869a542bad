#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <limits>

#include "slc/error.hpp"

namespace slc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

template <typename Derived>
typename Derived::RealScalar spectral_radius(const Eigen::MatrixBase<Derived>& M) {
  using Real = typename Derived::RealScalar;
  if (M.rows() == 0) return Real(0);
  Eigen::EigenSolver<MatrixX<Real>> es(M.derived().template cast<Real>(), false);
  if (es.info() != Eigen::Success) {
    fail(ErrorCode::kNonConvergentEigensolve, "spectral radius eigensolve failed");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Eigenvalues of the symmetric part, ascending.
template <typename Derived>
VectorX<typename Derived::RealScalar> symmetric_eigenvalues(
    const Eigen::MatrixBase<Derived>& M) {
  using Real = typename Derived::RealScalar;
  const MatrixX<Real> S = (M + M.transpose()) / Real(2);
  Eigen::SelfAdjointEigenSolver<MatrixX<Real>> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    fail(ErrorCode::kNonConvergentEigensolve, "symmetric eigensolve failed");
  }
  return es.eigenvalues();
}

template <typename Derived>
typename Derived::RealScalar max_symmetric_eigenvalue(const Eigen::MatrixBase<Derived>& M) {
  return symmetric_eigenvalues(M).maxCoeff();
}

template <typename Derived>
typename Derived::RealScalar condition_number(const Eigen::MatrixBase<Derived>& M) {
  using Real = typename Derived::RealScalar;
  Eigen::JacobiSVD<MatrixX<Real>> svd(M.derived().template cast<Real>());
  const auto& s = svd.singularValues();
  if (s.size() == 0) return Real(1);
  const Real smin = s(s.size() - 1);
  if (!(smin > Real(0))) return std::numeric_limits<Real>::infinity();
  return s(0) / smin;
}

// [B, AB, ..., A^{n-1}B]
template <typename Scalar>
MatrixX<Scalar> controllability_matrix(const MatrixX<Scalar>& A, const MatrixX<Scalar>& B) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = B.cols();
  if (A.cols() != n || B.rows() != n) {
    fail(ErrorCode::kDimensionMismatch, "controllability matrix shapes");
  }
  MatrixX<Scalar> R(n, n * m);
  if (n == 0) return R;
  R.leftCols(m) = B;
  for (Eigen::Index i = 1; i < n; ++i) {
    R.middleCols(m * i, m) = A * R.middleCols(m * (i - 1), m);
  }
  return R;
}

template <typename Scalar>
bool is_controllable(const MatrixX<Scalar>& A, const MatrixX<Scalar>& B) {
  if (A.rows() == 0) return true;
  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(controllability_matrix(A, B));
  return qr.rank() == A.rows();
}

// Solves A X - X B = C with a Kronecker-product linear system. Sizes here are
// small (mode blocks of a plant), so the dense solve is fine.
template <typename Scalar>
MatrixX<Scalar> solve_sylvester(const MatrixX<Scalar>& A, const MatrixX<Scalar>& B,
                                const MatrixX<Scalar>& C) {
  const Eigen::Index p = A.rows();
  const Eigen::Index q = B.rows();
  if (C.rows() != p || C.cols() != q) {
    fail(ErrorCode::kDimensionMismatch, "sylvester right-hand side shape");
  }
  MatrixX<Scalar> X(p, q);
  if (p == 0 || q == 0) return X;
  MatrixX<Scalar> K = MatrixX<Scalar>::Zero(p * q, p * q);
  for (Eigen::Index j = 0; j < q; ++j) {
    K.block(j * p, j * p, p, p) += A;
    for (Eigen::Index i = 0; i < q; ++i) {
      K.block(j * p, i * p, p, p) -= B(i, j) * MatrixX<Scalar>::Identity(p, p);
    }
  }
  Eigen::FullPivLU<MatrixX<Scalar>> lu(K);
  if (!lu.isInvertible()) {
    fail(ErrorCode::kIllConditionedTransform, "sylvester operator is singular (shared spectrum)");
  }
  const VectorX<Scalar> c = Eigen::Map<const VectorX<Scalar>>(C.data(), p * q);
  const VectorX<Scalar> x = lu.solve(c);
  X = Eigen::Map<const MatrixX<Scalar>>(x.data(), p, q);
  return X;
}

template <typename Scalar>
MatrixX<Scalar> matrix_power(const MatrixX<Scalar>& M, int k) {
  MatrixX<Scalar> result = MatrixX<Scalar>::Identity(M.rows(), M.cols());
  MatrixX<Scalar> base = M;
  unsigned e = static_cast<unsigned>(k < 0 ? -k : k);
  while (e > 0) {
    if (e & 1u) result = result * base;
    base = base * base;
    e >>= 1u;
  }
  if (k < 0) return result.inverse();
  return result;
}

}  // namespace slc
