#pragma once

#include <algorithm>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "cmdf/types.hpp"

namespace cmdf {

template <typename Scalar>
Matrix<Scalar> symmetrized(const Matrix<Scalar>& m) {
  return ((m + m.transpose()) * Scalar(0.5)).eval();
}

/// Square matrix kept symmetric by construction; implicit conversion from a
/// plain matrix symmetrizes, so expression results can be passed directly.
template <typename Scalar>
class SymMatrix {
 public:
  SymMatrix(const Matrix<Scalar>& m) {  // NOLINT: implicit by design
    if (m.rows() != m.cols()) {
      throw std::invalid_argument("SymMatrix: matrix must be square");
    }
    entries_ = symmetrized(m);
  }

  const Matrix<Scalar>& m() const { return entries_; }
  operator const Matrix<Scalar>&() const { return entries_; }
  Eigen::Index dim() const { return entries_.rows(); }

 private:
  Matrix<Scalar> entries_;
};

template <typename Scalar>
Scalar frobenius(const Matrix<Scalar>& m) {
  return m.norm();
}

/// Largest eigenvalue modulus, via the general (non-symmetric) eigensolver.
template <typename Scalar>
Scalar spectral_radius(const Matrix<Scalar>& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("spectral_radius: matrix must be square");
  }
  Eigen::EigenSolver<Matrix<Scalar>> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar max_singular_value(const Matrix<Scalar>& m) {
  Eigen::JacobiSVD<Matrix<Scalar>> svd(m);
  return svd.singularValues()(0);
}

/// Eigenvalues of the symmetrized input, ascending.
template <typename Scalar>
Vector<Scalar> symmetric_eigenvalues(const Matrix<Scalar>& m) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrized(m),
                                                   Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericalError("symmetric_eigenvalues: eigensolver failed");
  }
  return es.eigenvalues();
}

template <typename Scalar>
Scalar min_eigenvalue(const Matrix<Scalar>& m) {
  return symmetric_eigenvalues(m).minCoeff();
}

template <typename Scalar>
bool is_positive_definite(const Matrix<Scalar>& m, Scalar tol = Scalar(0)) {
  return min_eigenvalue(m) > tol;
}

template <typename Scalar>
bool is_positive_semidefinite(const Matrix<Scalar>& m, Scalar tol) {
  return min_eigenvalue(m) >= -tol;
}

enum class LoewnerOrdering { GEQ, LEQ, EQ, INDEFINITE };

inline const char* to_string(LoewnerOrdering o) {
  switch (o) {
    case LoewnerOrdering::GEQ: return "GEQ";
    case LoewnerOrdering::LEQ: return "LEQ";
    case LoewnerOrdering::EQ: return "EQ";
    default: return "INDEFINITE";
  }
}

template <typename Scalar>
struct LoewnerVerdict {
  LoewnerOrdering ordering = LoewnerOrdering::INDEFINITE;
  Scalar min_eig_of_difference = Scalar(0);  // smallest eigenvalue of sym(a - b)
  Scalar tolerance = Scalar(0);

  bool geq() const {
    return ordering == LoewnerOrdering::GEQ || ordering == LoewnerOrdering::EQ;
  }
  bool leq() const {
    return ordering == LoewnerOrdering::LEQ || ordering == LoewnerOrdering::EQ;
  }
  bool eq() const { return ordering == LoewnerOrdering::EQ; }
};

/// Relative tolerance used when none is given: scales with the larger operand
/// so well-separated orderings never come back INDEFINITE.
template <typename Scalar>
Scalar default_loewner_tol(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return Scalar(1e-9) * (Scalar(1) + std::max(frobenius(a), frobenius(b)));
}

/// Positive-semidefinite ordering of two symmetric matrices at tolerance tol:
/// GEQ iff min eig(a - b) >= -tol, LEQ iff min eig(b - a) >= -tol, EQ iff both.
template <typename Scalar>
LoewnerVerdict<Scalar> loewner_compare(const SymMatrix<Scalar>& a,
                                       const SymMatrix<Scalar>& b, Scalar tol) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("loewner_compare: dimension mismatch");
  }
  if (tol < Scalar(0)) {
    throw std::invalid_argument("loewner_compare: tolerance must be >= 0");
  }
  const Vector<Scalar> eigs = symmetric_eigenvalues<Scalar>(a.m() - b.m());
  const Scalar lo = eigs.minCoeff();
  const Scalar hi = eigs.maxCoeff();
  LoewnerVerdict<Scalar> v;
  v.min_eig_of_difference = lo;
  v.tolerance = tol;
  const bool geq = lo >= -tol;
  const bool leq = hi <= tol;
  if (geq && leq) {
    v.ordering = LoewnerOrdering::EQ;
  } else if (geq) {
    v.ordering = LoewnerOrdering::GEQ;
  } else if (leq) {
    v.ordering = LoewnerOrdering::LEQ;
  } else {
    v.ordering = LoewnerOrdering::INDEFINITE;
  }
  return v;
}

template <typename Scalar>
LoewnerVerdict<Scalar> loewner_compare(const SymMatrix<Scalar>& a,
                                       const SymMatrix<Scalar>& b) {
  return loewner_compare(a, b, default_loewner_tol(a.m(), b.m()));
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> checked_inverse(const Matrix<Scalar>& m, const char* what) {
  Eigen::FullPivLU<Matrix<Scalar>> lu(m);
  if (!lu.isInvertible()) {
    throw NumericalError(std::string(what) + ": matrix is singular");
  }
  return lu.inverse();
}

/// Solve m * x = rhs through an LLT factorization (covariance-type m).
template <typename Scalar>
Matrix<Scalar> spd_solve(const Matrix<Scalar>& m, const Matrix<Scalar>& rhs,
                         const char* what) {
  Eigen::LDLT<Matrix<Scalar>> ldlt(symmetrized(m));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError(std::string(what) + ": matrix is not positive definite");
  }
  return ldlt.solve(rhs);
}

template <typename Scalar>
Matrix<Scalar> spd_inverse(const Matrix<Scalar>& m, const char* what) {
  return spd_solve<Scalar>(m, Matrix<Scalar>::Identity(m.rows(), m.cols()), what);
}

}  // namespace detail

/// Frobenius residual of (A + BCD)^-1 = A^-1 - A^-1 B (C^-1 + D A^-1 B)^-1 D A^-1.
/// Both sides are evaluated literally; the identity itself is under test.
template <typename Scalar>
Scalar inversion_lemma_residual(const Matrix<Scalar>& A, const Matrix<Scalar>& B,
                                const Matrix<Scalar>& C, const Matrix<Scalar>& D) {
  if (B.rows() != A.rows() || C.rows() != B.cols() || D.cols() != A.cols() ||
      D.rows() != C.cols()) {
    throw std::invalid_argument("inversion_lemma_residual: nonconformable shapes");
  }
  const Matrix<Scalar> Ai = detail::checked_inverse<Scalar>(A, "inversion_lemma_residual(A)");
  const Matrix<Scalar> Ci = detail::checked_inverse<Scalar>(C, "inversion_lemma_residual(C)");
  const Matrix<Scalar> lhs =
      detail::checked_inverse<Scalar>(A + B * C * D, "inversion_lemma_residual(A+BCD)");
  const Matrix<Scalar> inner =
      detail::checked_inverse<Scalar>(Ci + D * Ai * B, "inversion_lemma_residual(inner)");
  const Matrix<Scalar> rhs = Ai - Ai * B * inner * D * Ai;
  return frobenius<Scalar>(lhs - rhs);
}

/// Frobenius residual of
/// a (A+B)^-1 A (A+B)^-1 - (A+B)^-1 = (A+B)^-1 ((a-1) I - a B (A+B)^-1).
template <typename Scalar>
Scalar scaled_inverse_identity_residual(const Matrix<Scalar>& A,
                                        const Matrix<Scalar>& B, Scalar a) {
  if (A.rows() != B.rows() || A.cols() != B.cols() || A.rows() != A.cols()) {
    throw std::invalid_argument("scaled_inverse_identity_residual: shape mismatch");
  }
  detail::checked_inverse<Scalar>(A, "scaled_inverse_identity_residual(A)");
  detail::checked_inverse<Scalar>(B, "scaled_inverse_identity_residual(B)");
  const Matrix<Scalar> Si =
      detail::checked_inverse<Scalar>(A + B, "scaled_inverse_identity_residual(A+B)");
  const Matrix<Scalar> I = Matrix<Scalar>::Identity(A.rows(), A.cols());
  const Matrix<Scalar> lhs = a * Si * A * Si - Si;
  const Matrix<Scalar> rhs = Si * ((a - Scalar(1)) * I - a * B * Si);
  return frobenius<Scalar>(lhs - rhs);
}

/// Frobenius residual of (A+B)^-1 - A^-1 = -A^-1 B (A+B)^-1.
template <typename Scalar>
Scalar inverse_difference_residual(const Matrix<Scalar>& A, const Matrix<Scalar>& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols() || A.rows() != A.cols()) {
    throw std::invalid_argument("inverse_difference_residual: shape mismatch");
  }
  const Matrix<Scalar> Ai = detail::checked_inverse<Scalar>(A, "inverse_difference_residual(A)");
  detail::checked_inverse<Scalar>(B, "inverse_difference_residual(B)");
  const Matrix<Scalar> Si =
      detail::checked_inverse<Scalar>(A + B, "inverse_difference_residual(A+B)");
  return frobenius<Scalar>((Si - Ai) + Ai * B * Si);
}

/// Update-cost comparison psi(K) = (I-KH) Sigma (I-KH)^T + K R K^T against the
/// minimizing gain K_min = Sigma H^T (H Sigma H^T + R)^-1. The returned verdict
/// compares psi(K_alt) with psi(K_min) and can never be strictly LEQ.
template <typename Scalar>
LoewnerVerdict<Scalar> check_optimal_gain(const SymMatrix<Scalar>& Sigma,
                                          const Matrix<Scalar>& H,
                                          const SymMatrix<Scalar>& R,
                                          const Matrix<Scalar>& K_alt) {
  const Eigen::Index n = Sigma.dim();
  if (H.cols() != n || R.dim() != H.rows() || K_alt.rows() != n ||
      K_alt.cols() != H.rows()) {
    throw std::invalid_argument("check_optimal_gain: shape mismatch");
  }
  const Matrix<Scalar> S = symmetrized<Scalar>(H * Sigma.m() * H.transpose() + R.m());
  const Matrix<Scalar> K_min =
      detail::spd_solve<Scalar>(S, H * Sigma.m(), "check_optimal_gain").transpose();
  const Matrix<Scalar> I = Matrix<Scalar>::Identity(n, n);
  auto psi = [&](const Matrix<Scalar>& K) -> Matrix<Scalar> {
    const Matrix<Scalar> IKH = I - K * H;
    return symmetrized<Scalar>(IKH * Sigma.m() * IKH.transpose() +
                               K * R.m() * K.transpose());
  };
  return loewner_compare<Scalar>(psi(K_alt), psi(K_min));
}

template <typename Scalar>
Matrix<Scalar> kron(const Matrix<Scalar>& A, const Matrix<Scalar>& B) {
  Matrix<Scalar> out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return out;
}

/// Column-stacking vectorization, so that vec(ABC) = (C^T kron A) vec(B).
template <typename Scalar>
Vector<Scalar> vec(const Matrix<Scalar>& m) {
  return Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
}

template <typename Scalar>
Matrix<Scalar> unvec(const Vector<Scalar>& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw std::invalid_argument("unvec: size mismatch");
  }
  return Eigen::Map<const Matrix<Scalar>>(v.data(), rows, cols);
}

enum class LyapunovForm {
  kLeftTransposed,  // X = F^T X F + G
  kRight,           // X = F X F^T + G
};

/// Unique fixed point of the discrete Lyapunov equation, by the vectorized
/// solve (I - F kron F) vec(X) = vec(G). Requires F Schur stable.
template <typename Scalar>
Matrix<Scalar> solve_discrete_lyapunov(const Matrix<Scalar>& F,
                                       const SymMatrix<Scalar>& G,
                                       LyapunovForm form = LyapunovForm::kRight) {
  if (F.rows() != F.cols() || F.rows() != G.dim()) {
    throw std::invalid_argument("solve_discrete_lyapunov: shape mismatch");
  }
  const Scalar rho = spectral_radius(F);
  if (!(rho < Scalar(1))) {
    throw NumericalError("solve_discrete_lyapunov: F is not Schur stable (rho = " +
                         std::to_string(static_cast<double>(rho)) + ")");
  }
  const Eigen::Index n = F.rows();
  Matrix<Scalar> kff = kron(F, F);
  if (form == LyapunovForm::kLeftTransposed) kff.transposeInPlace();
  const Matrix<Scalar> system = Matrix<Scalar>::Identity(n * n, n * n) - kff;
  const Vector<Scalar> x = system.partialPivLu().solve(vec(G.m()));
  const Matrix<Scalar> X = symmetrized<Scalar>(unvec<Scalar>(x, n, n));

  const Matrix<Scalar> back = (form == LyapunovForm::kRight)
                                  ? Matrix<Scalar>(F * X * F.transpose())
                                  : Matrix<Scalar>(F.transpose() * X * F);
  const Scalar residual = frobenius<Scalar>(X - back - G.m());
  if (residual > Scalar(1e-8) * (Scalar(1) + frobenius(X))) {
    throw NumericalError("solve_discrete_lyapunov: residual too large");
  }
  return X;
}

}  // namespace cmdf
