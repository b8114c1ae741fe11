#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "ifa/errors.hpp"

namespace ifa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Relative asymmetry accepted when validating symmetric input.
inline constexpr double kSymmetryTol = 1e-8;
// Eigenvalues above -kPsdTol * lambda_max still count as nonnegative.
inline constexpr double kPsdTol = 1e-10;
// Inversions with a condition estimate beyond this raise IllConditionedError
// instead of returning garbage.
inline constexpr double kMaxCondition = 1e14;

// Partition of a square matrix into a leading n1 x n1 block and a trailing
// n2 x n2 block.
struct BlockSplit {
  Index n1;
  Index n2;

  BlockSplit(Index leading, Index trailing) : n1(leading), n2(trailing) {
    if (n1 < 1 || n2 < 0) {
      throw DimensionError("BlockSplit requires n1 >= 1 and n2 >= 0");
    }
  }

  Index dim() const { return n1 + n2; }
};

namespace detail {

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << ": expected a square matrix, got " << m.rows() << "x" << m.cols();
    throw DimensionError(os.str());
  }
}

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose().eval()); }

}  // namespace detail

// Validated symmetric matrix. Construction checks relative asymmetry against
// `symmetry_tol`, stores the exactly symmetrized part (M + M^T)/2, and keeps
// the eigenvalue range that backs the definiteness queries.
class CovMatrix {
 public:
  explicit CovMatrix(Matrix m, double symmetry_tol = kSymmetryTol)
      : symmetry_tol_(symmetry_tol) {
    detail::require_square(m, "CovMatrix");
    if (m.rows() < 1) throw DimensionError("CovMatrix: dimension must be >= 1");
    const double scale = std::max(m.norm(), 1e-300);
    const double asym = (m - m.transpose().eval()).norm() / scale;
    if (asym > symmetry_tol_) {
      std::ostringstream os;
      os << "CovMatrix: relative asymmetry " << asym << " exceeds tolerance " << symmetry_tol_;
      throw AsymmetryError(os.str());
    }
    m_ = std::move(m);
    detail::symmetrize(m_);
    Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
    min_eig_ = es.eigenvalues().minCoeff();
    max_eig_ = es.eigenvalues().maxCoeff();
  }

  Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }
  double symmetry_tol() const { return symmetry_tol_; }
  double min_eigenvalue() const { return min_eig_; }
  double max_eigenvalue() const { return max_eig_; }

  // Definitely positive definite: the smallest eigenvalue clears the noise
  // floor of the eigensolver. Exactly singular matrices classify as not PD
  // regardless of rounding in the tiny eigenvalues.
  bool is_pd() const {
    const double floor = static_cast<double>(dim()) * 2.3e-16 * std::max(std::abs(max_eig_), 1e-300);
    return min_eig_ > floor;
  }

  bool is_psd() const {
    return min_eig_ >= -kPsdTol * std::max(std::abs(max_eig_), 1e-300);
  }

  void require_pd(const char* what) const {
    if (!is_pd()) {
      std::ostringstream os;
      os << what << ": matrix is not positive definite (smallest eigenvalue " << min_eig_ << ")";
      throw NotPsdError(os.str());
    }
  }

 private:
  Matrix m_;
  double symmetry_tol_;
  double min_eig_ = 0.0;
  double max_eig_ = 0.0;
};

// Keeps the diagonal of a square matrix and zeroes everything else.
inline Matrix delta(const Matrix& m) {
  detail::require_square(m, "delta");
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  out.diagonal() = m.diagonal();
  return out;
}

// Frobenius norm of A - B.
inline double l2_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("l2_diff: shape mismatch");
  }
  return (a - b).norm();
}

namespace detail {

// General-purpose inverse with singularity and conditioning guards; `what`
// names the matrix in diagnostics.
inline Matrix guarded_inverse(const Matrix& m, const char* what) {
  require_square(m, what);
  if (m.rows() == 0) return m;
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) {
    throw SingularityError(std::string(what) + ": matrix is singular");
  }
  const double rcond = lu.rcond();
  if (rcond < 1.0 / kMaxCondition) {
    std::ostringstream os;
    os << what << ": condition estimate " << 1.0 / std::max(rcond, 1e-300)
       << " exceeds supported range " << kMaxCondition;
    throw IllConditionedError(os.str());
  }
  return lu.inverse();
}

// Symmetric PSD root S and its inverse, from one eigendecomposition.
inline std::pair<Matrix, Matrix> psd_sqrt_and_inv(const Matrix& p) {
  require_square(p, "psd_sqrt");
  const double scale = std::max(p.norm(), 1e-300);
  if ((p - p.transpose().eval()).norm() > kSymmetryTol * scale) {
    throw AsymmetryError("psd_sqrt: input is not symmetric");
  }
  Matrix sym = p;
  symmetrize(sym);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw Error("psd_sqrt: eigendecomposition failed");
  const Vector& ev = es.eigenvalues();
  const double lmax = std::max(ev.maxCoeff(), 0.0);
  if (ev.minCoeff() < -kPsdTol * std::max(lmax, 1e-300)) {
    std::ostringstream os;
    os << "psd_sqrt: matrix is not positive semidefinite (smallest eigenvalue "
       << ev.minCoeff() << ")";
    throw NotPsdError(os.str());
  }
  if (ev.minCoeff() <= kPsdTol * std::max(lmax, 1e-300)) {
    std::ostringstream os;
    os << "psd_sqrt: matrix is numerically singular (smallest eigenvalue " << ev.minCoeff()
       << "), no inverse root";
    throw SingularityError(os.str());
  }
  Vector roots = ev.cwiseMax(0.0).cwiseSqrt();
  Matrix s = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  Matrix sinv =
      es.eigenvectors() * roots.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  symmetrize(s);
  symmetrize(sinv);
  return {std::move(s), std::move(sinv)};
}

}  // namespace detail

// The symmetric PSD root S of P, with S^T S = S S = P. Eigenvalues within
// the PSD tolerance of zero are clamped to zero.
inline Matrix psd_sqrt(const Matrix& p) {
  detail::require_square(p, "psd_sqrt");
  const double scale = std::max(p.norm(), 1e-300);
  if ((p - p.transpose().eval()).norm() > kSymmetryTol * scale) {
    throw AsymmetryError("psd_sqrt: input is not symmetric");
  }
  Matrix sym = p;
  detail::symmetrize(sym);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw Error("psd_sqrt: eigendecomposition failed");
  const Vector& ev = es.eigenvalues();
  const double lmax = std::max(ev.maxCoeff(), 0.0);
  if (ev.minCoeff() < -kPsdTol * std::max(lmax, 1e-300)) {
    std::ostringstream os;
    os << "psd_sqrt: matrix is not positive semidefinite (smallest eigenvalue "
       << ev.minCoeff() << ")";
    throw NotPsdError(os.str());
  }
  Vector roots = ev.cwiseMax(0.0).cwiseSqrt();
  Matrix s = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
  detail::symmetrize(s);
  return s;
}

// Inverse of a matrix assembled from its explicit block decomposition around
// the trailing diagonal block: for M = [[A, C], [B, D]] with D and the Schur
// complement A - C D^{-1} B invertible,
//   M^{-1} = [[S^{-1},         -S^{-1} C D^{-1}                ],
//             [-D^{-1} B S^{-1}, D^{-1} + D^{-1} B S^{-1} C D^{-1}]],
// where S = A - C D^{-1} B.
inline Matrix block_inverse(const Matrix& m, const BlockSplit& split) {
  detail::require_square(m, "block_inverse");
  if (split.dim() != m.rows()) {
    throw DimensionError("block_inverse: split does not match matrix dimension");
  }
  const Index n1 = split.n1;
  const Index n2 = split.n2;
  if (n2 == 0) return detail::guarded_inverse(m, "block_inverse");

  const Matrix a = m.topLeftCorner(n1, n1);
  const Matrix c = m.topRightCorner(n1, n2);
  const Matrix b = m.bottomLeftCorner(n2, n1);
  const Matrix d = m.bottomRightCorner(n2, n2);

  const Matrix dinv = detail::guarded_inverse(d, "block_inverse: trailing diagonal block");
  const Matrix schur = a - c * dinv * b;
  const Matrix sinv = detail::guarded_inverse(schur, "block_inverse: Schur complement");

  Matrix out(m.rows(), m.cols());
  out.topLeftCorner(n1, n1) = sinv;
  out.topRightCorner(n1, n2) = -sinv * c * dinv;
  out.bottomLeftCorner(n2, n1) = -dinv * b * sinv;
  out.bottomRightCorner(n2, n2) = dinv + dinv * b * sinv * c * dinv;
  return out;
}

// (D - B A C)^{-1} via D^{-1} + D^{-1} B (A^{-1} - C D^{-1} B)^{-1} C D^{-1}.
// Besides D itself, only matrices of the inner dimension are inverted.
inline Matrix woodbury_inverse(const Matrix& d, const Matrix& b, const Matrix& a,
                               const Matrix& c) {
  detail::require_square(d, "woodbury_inverse: D");
  detail::require_square(a, "woodbury_inverse: A");
  if (b.rows() != d.rows() || b.cols() != a.rows() || c.rows() != a.cols() ||
      c.cols() != d.cols()) {
    throw DimensionError("woodbury_inverse: block shapes do not line up");
  }
  const Matrix dinv = detail::guarded_inverse(d, "woodbury_inverse: D");
  const Matrix ainv = detail::guarded_inverse(a, "woodbury_inverse: A");
  const Matrix inner = ainv - c * dinv * b;
  const Matrix inner_inv = detail::guarded_inverse(inner, "woodbury_inverse: inner matrix");
  return dinv + dinv * b * inner_inv * c * dinv;
}

// Conditional covariance S11 - S12 S22^{-1} S21 of the leading block given
// the trailing one. The result is symmetric, and PSD whenever the input is.
inline Matrix schur_complement(const Matrix& m, const BlockSplit& split) {
  detail::require_square(m, "schur_complement");
  if (split.dim() != m.rows()) {
    throw DimensionError("schur_complement: split does not match matrix dimension");
  }
  const Index n1 = split.n1;
  const Index n2 = split.n2;
  if (n2 == 0) return m;
  const Matrix s12 = m.topRightCorner(n1, n2);
  const Matrix s22_inv = detail::guarded_inverse(m.bottomRightCorner(n2, n2),
                                                 "schur_complement: trailing block");
  Matrix out = m.topLeftCorner(n1, n1) - s12 * s22_inv * s12.transpose();
  detail::symmetrize(out);
  return out;
}

inline Matrix schur_complement(const CovMatrix& m, const BlockSplit& split) {
  return schur_complement(m.mat(), split);
}

}  // namespace ifa
