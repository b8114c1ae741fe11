#pragma once

#include <cmath>
#include <limits>

#include "ifa/matrix.hpp"
#include "ifa/params.hpp"

namespace ifa {

// Reported divergences below this read as exactly zero.
inline constexpr double kDivergenceClamp = 1e-12;

// I-divergence (Kullback-Leibler divergence between zero-mean normal laws)
// as a value type. The value is +infinity when the second covariance is
// singular; callers must branch on is_finite() before consuming nats().
class DivergenceValue {
 public:
  static DivergenceValue infinite() {
    DivergenceValue v(0.0);
    v.finite_ = false;
    return v;
  }

  explicit DivergenceValue(double raw) : raw_(raw) {}

  bool is_finite() const { return finite_; }

  // Reported value: raw values below the clamp threshold read as exactly 0.
  double nats() const {
    if (!finite_) return std::numeric_limits<double>::infinity();
    return raw_ < kDivergenceClamp ? 0.0 : raw_;
  }

  // Unclamped value, retained for monotonicity accounting.
  double raw() const { return finite_ ? raw_ : std::numeric_limits<double>::infinity(); }

 private:
  double raw_ = 0.0;
  bool finite_ = true;
};

// I(S1 || S2) = 1/2 log(|S2| / |S1|) - m/2 + 1/2 tr(S2^{-1} S1).
//
// Log-determinants come from the Cholesky factors of each argument
// separately, so no explicit determinant can overflow. A singular (non-PD)
// S2 yields the infinity marker; a singular S1 is a domain error.
inline DivergenceValue i_div(const Matrix& s1, const Matrix& s2) {
  detail::require_square(s1, "i_div: S1");
  detail::require_square(s2, "i_div: S2");
  if (s1.rows() != s2.rows()) throw DimensionError("i_div: dimension mismatch");

  Eigen::LLT<Matrix> l1(s1);
  if (l1.info() != Eigen::Success) {
    throw DomainError("i_div: first covariance is not positive definite");
  }
  Eigen::LLT<Matrix> l2(s2);
  if (l2.info() != Eigen::Success) return DivergenceValue::infinite();

  const double logdet1 = 2.0 * l1.matrixLLT().diagonal().array().log().sum();
  const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
  const double trace_term = l2.solve(s1).trace();
  const double m = static_cast<double>(s1.rows());
  return DivergenceValue(0.5 * (logdet2 - logdet1) - 0.5 * m + 0.5 * trace_term);
}

inline DivergenceValue i_div(const CovMatrix& s1, const CovMatrix& s2) {
  return i_div(s1.mat(), s2.mat());
}

// Divergence between normal laws with arbitrary means: the covariance part
// plus the quadratic term 1/2 (mu1 - mu2)^T S2^{-1} (mu1 - mu2).
inline DivergenceValue i_div_with_means(const Vector& mu1, const Matrix& s1, const Vector& mu2,
                                        const Matrix& s2) {
  if (mu1.size() != s1.rows() || mu2.size() != s2.rows() || mu1.size() != mu2.size()) {
    throw DimensionError("i_div_with_means: dimension mismatch");
  }
  DivergenceValue base = i_div(s1, s2);
  if (!base.is_finite()) return base;
  Eigen::LLT<Matrix> l2(s2);
  const Vector diff = mu1 - mu2;
  return DivergenceValue(base.raw() + 0.5 * diff.dot(l2.solve(diff)));
}

inline DivergenceValue i_div_with_means(const Vector& mu1, const CovMatrix& s1,
                                        const Vector& mu2, const CovMatrix& s2) {
  return i_div_with_means(mu1, s1.mat(), mu2, s2.mat());
}

// The quantity every solver minimizes: I(sigma_hat || H H^T + diag(d)).
inline DivergenceValue objective(const CovMatrix& sigma_hat, const FactorParams& params) {
  if (sigma_hat.dim() != params.n()) {
    throw DimensionError("objective: parameter dimension does not match covariance");
  }
  return i_div(sigma_hat.mat(), params.model());
}

inline DivergenceValue objective(const CovMatrix& sigma_hat, const LpdParams& params) {
  if (sigma_hat.dim() != params.n()) {
    throw DimensionError("objective: parameter dimension does not match covariance");
  }
  return i_div(sigma_hat.mat(), params.model());
}

// Additive split of the objective for parameters whose trailing noise block
// is pinned to zero. Requires the reduced loading layout
//   H = [[H11, H12], [0, H22]],  H22 invertible,
// with the zero block of size n2 x (k - n2). The three terms are
//   reduced_div     the divergence of the conditional covariance of the
//                   leading block against H11 H11^T + D1,
//   corner_div      the divergence of the trailing block against H22 H22^T,
//   coupling_half_trace
//                   1/2 tr(S22 K^T (H11 H11^T + D1)^{-1} K) with
//                   K = S12 S22^{-1} - H12 H22^{-1},
// and their sum equals the full objective.
struct SingularObjectiveSplit {
  double reduced_div;
  double corner_div;
  double coupling_half_trace;

  double total() const { return reduced_div + corner_div + coupling_half_trace; }
};

inline SingularObjectiveSplit singular_div_decomposition(const CovMatrix& sigma_hat,
                                                         const FactorParams& params,
                                                         const BlockSplit& split) {
  const Index n = sigma_hat.dim();
  const Index k = params.k();
  if (params.n() != n || split.dim() != n) {
    throw DimensionError("singular_div_decomposition: dimension mismatch");
  }
  const Index n1 = split.n1;
  const Index n2 = split.n2;
  if (n2 < 1) throw StructureError("singular_div_decomposition: split needs n2 >= 1");
  if (n2 > k) {
    throw StructureError("singular_div_decomposition: loading is too narrow for the split");
  }
  const double dscale = std::max(1.0, params.d.cwiseAbs().maxCoeff());
  if (params.d.tail(n2).cwiseAbs().maxCoeff() > 1e-12 * dscale) {
    throw StructureError("singular_div_decomposition: trailing noise block is not zero");
  }
  const double hscale = std::max(params.H.norm(), 1e-300);
  if (n2 < k && params.H.bottomLeftCorner(n2, k - n2).norm() > 1e-10 * hscale) {
    throw StructureError(
        "singular_div_decomposition: loading lacks the reduced zero block");
  }

  const Matrix h11 = params.H.topLeftCorner(n1, k - n2);
  const Matrix h12 = params.H.topRightCorner(n1, n2);
  const Matrix h22 = params.H.bottomRightCorner(n2, n2);
  const Matrix s12 = sigma_hat.mat().topRightCorner(n1, n2);
  const Matrix s22 = sigma_hat.mat().bottomRightCorner(n2, n2);

  const Matrix cond = schur_complement(sigma_hat, split);
  Matrix reduced_model = h11 * h11.transpose();
  reduced_model.diagonal() += params.d.head(n1);
  detail::symmetrize(reduced_model);

  const Matrix s22_inv = detail::guarded_inverse(s22, "singular_div_decomposition: S22");
  const Matrix h22_inv = detail::guarded_inverse(h22, "singular_div_decomposition: H22");
  const Matrix coupling = s12 * s22_inv - h12 * h22_inv;

  Eigen::LLT<Matrix> lred(reduced_model);
  if (lred.info() != Eigen::Success) {
    throw SingularityError("singular_div_decomposition: reduced model is not positive definite");
  }
  const double half_trace = 0.5 * (s22 * coupling.transpose() * lred.solve(coupling)).trace();

  return SingularObjectiveSplit{i_div(cond, reduced_model).raw(),
                                i_div(s22, Matrix(h22 * h22.transpose())).raw(), half_trace};
}

}  // namespace ifa
