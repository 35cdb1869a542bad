#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <complex>
#include <functional>
#include <vector>

#include "slc/linalg.hpp"

namespace slc {

/// Real Schur factorization A = U S U^T with S quasi-upper-triangular.
template <typename Scalar>
struct RealSchurForm {
  MatrixX<Scalar> U;
  MatrixX<Scalar> S;
};

/// Diagonal block of a quasi-triangular matrix: 1x1 real or 2x2 complex pair.
struct SchurBlock {
  Eigen::Index start;
  Eigen::Index size;
};

template <typename Scalar>
std::vector<SchurBlock> schur_blocks(const MatrixX<Scalar>& S) {
  std::vector<SchurBlock> blocks;
  const Eigen::Index n = S.rows();
  Eigen::Index i = 0;
  while (i < n) {
    if (i + 1 < n && S(i + 1, i) != Scalar(0)) {
      blocks.push_back({i, 2});
      i += 2;
    } else {
      blocks.push_back({i, 1});
      i += 1;
    }
  }
  return blocks;
}

template <typename Scalar>
std::vector<std::complex<Scalar>> block_eigenvalues(const MatrixX<Scalar>& S,
                                                    const SchurBlock& b) {
  if (b.size == 1) return {std::complex<Scalar>(S(b.start, b.start), Scalar(0))};
  const Scalar a = S(b.start, b.start);
  const Scalar bb = S(b.start, b.start + 1);
  const Scalar c = S(b.start + 1, b.start);
  const Scalar d = S(b.start + 1, b.start + 1);
  const Scalar half_tr = (a + d) / Scalar(2);
  const Scalar disc = (a - d) * (a - d) / Scalar(4) + bb * c;
  if (disc >= Scalar(0)) {
    const Scalar r = std::sqrt(disc);
    return {std::complex<Scalar>(half_tr + r, 0), std::complex<Scalar>(half_tr - r, 0)};
  }
  const Scalar im = std::sqrt(-disc);
  return {std::complex<Scalar>(half_tr, im), std::complex<Scalar>(half_tr, -im)};
}

/// Swaps the adjacent diagonal blocks starting at `first` (size p) and the one
/// right after it (size q) by an orthogonal similarity applied to S and U.
/// Direct swapping: the invariant subspace of the trailing block is
/// span([-X; I]) where A11 X - X A22 = A12.
template <typename Scalar>
void swap_adjacent_blocks(RealSchurForm<Scalar>& form, Eigen::Index first, Eigen::Index p,
                          Eigen::Index q) {
  MatrixX<Scalar>& S = form.S;
  const Eigen::Index n = S.rows();
  const Eigen::Index m = p + q;
  const MatrixX<Scalar> A11 = S.block(first, first, p, p);
  const MatrixX<Scalar> A12 = S.block(first, first + p, p, q);
  const MatrixX<Scalar> A22 = S.block(first + p, first + p, q, q);
  const MatrixX<Scalar> X = solve_sylvester<Scalar>(A11, A22, A12);

  MatrixX<Scalar> basis(m, q);
  basis.topRows(p) = -X;
  basis.bottomRows(q).setIdentity();
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(basis);
  const MatrixX<Scalar> Q = qr.householderQ() * MatrixX<Scalar>::Identity(m, m);

  S.middleCols(first, m) = S.middleCols(first, m) * Q;
  S.middleRows(first, m) = Q.transpose() * S.middleRows(first, m);
  form.U.middleCols(first, m) = form.U.middleCols(first, m) * Q;

  // The similarity is exact up to rounding; clear what must be structurally zero.
  S.block(first + q, first, p, q).setZero();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 2; i < n; ++i) S(i, j) = Scalar(0);
  }
}

/// Real Schur decomposition reordered so that blocks satisfying `leading`
/// occupy the top-left; relative order is otherwise preserved.
template <typename Scalar>
RealSchurForm<Scalar> ordered_real_schur(
    const MatrixX<Scalar>& A,
    const std::function<bool(const std::vector<std::complex<Scalar>>&)>& leading) {
  Eigen::RealSchur<MatrixX<Scalar>> rs(A, true);
  if (rs.info() != Eigen::Success) {
    fail(ErrorCode::kNonConvergentEigensolve, "real Schur iteration did not converge");
  }
  RealSchurForm<Scalar> form{rs.matrixU(), rs.matrixT()};
  const Eigen::Index n = A.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 2; i < n; ++i) form.S(i, j) = Scalar(0);
  }

  // Bubble leading blocks upward one adjacent swap at a time.
  bool swapped = true;
  while (swapped) {
    swapped = false;
    const auto blocks = schur_blocks(form.S);
    for (std::size_t k = 0; k + 1 < blocks.size(); ++k) {
      const bool lead_k = leading(block_eigenvalues(form.S, blocks[k]));
      const bool lead_next = leading(block_eigenvalues(form.S, blocks[k + 1]));
      if (!lead_k && lead_next) {
        swap_adjacent_blocks(form, blocks[k].start, blocks[k].size, blocks[k + 1].size);
        swapped = true;
        break;
      }
    }
  }
  return form;
}

}  // namespace slc
