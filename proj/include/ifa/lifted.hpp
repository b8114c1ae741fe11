#pragma once

#include <utility>

#include "ifa/divergence.hpp"
#include "ifa/matrix.hpp"
#include "ifa/params.hpp"

namespace ifa {

// Relative off-diagonal mass of the conditional covariance below which a
// lifted matrix counts as factor-structured. Chosen so that projection
// idempotence holds at double precision.
inline constexpr double kFactorFamilyTol = 1e-8;

// Covariance of the joint (n+k)-dimensional vector of observations and
// latent factors, kept as the three distinct blocks of
// [[S11, S12], [S12^T, S22]].
//
// Two families of these matrices drive everything here:
//   - the target family: S11 equals a fixed covariance (in_target_family),
//   - the factor family: S11 - S12 S22^{-1} S21 is diagonal, equivalently
//     the blocks are (H H^T + D, H Q, Q^T Q) for some H, diagonal D and
//     invertible Q (in_factor_family).
class LiftedCov {
 public:
  LiftedCov(Matrix s11, Matrix s12, Matrix s22)
      : s11_(std::move(s11)), s12_(std::move(s12)), s22_(std::move(s22)) {
    detail::require_square(s11_, "LiftedCov: S11");
    detail::require_square(s22_, "LiftedCov: S22");
    if (s11_.rows() < 1) throw DimensionError("LiftedCov: n must be >= 1");
    if (s22_.rows() < 1) throw DimensionError("LiftedCov: k must be >= 1");
    if (s12_.rows() != s11_.rows() || s12_.cols() != s22_.rows()) {
      throw DimensionError("LiftedCov: cross block must be n x k");
    }
    const double scale11 = std::max(s11_.norm(), 1e-300);
    const double scale22 = std::max(s22_.norm(), 1e-300);
    if ((s11_ - s11_.transpose().eval()).norm() > kSymmetryTol * scale11 ||
        (s22_ - s22_.transpose().eval()).norm() > kSymmetryTol * scale22) {
      throw AsymmetryError("LiftedCov: diagonal blocks are not symmetric");
    }
    detail::symmetrize(s11_);
    detail::symmetrize(s22_);
  }

  // Blocks (H H^T + D, H Q, Q^T Q) for parameters (H, d) and latent root Q.
  static LiftedCov from_params(const FactorParams& params, const Matrix& q) {
    if (q.rows() != params.k() || q.cols() != params.k()) {
      throw DimensionError("LiftedCov::from_params: Q must be k x k");
    }
    return LiftedCov(params.model(), params.H * q, q.transpose() * q);
  }

  static LiftedCov from_assembled(const Matrix& full, Index n) {
    detail::require_square(full, "LiftedCov::from_assembled");
    if (n < 1 || n >= full.rows()) {
      throw DimensionError("LiftedCov::from_assembled: invalid observed dimension");
    }
    const Index k = full.rows() - n;
    return LiftedCov(full.topLeftCorner(n, n), full.topRightCorner(n, k),
                     full.bottomRightCorner(k, k));
  }

  Index n() const { return s11_.rows(); }
  Index k() const { return s22_.rows(); }
  const Matrix& s11() const { return s11_; }
  const Matrix& s12() const { return s12_; }
  const Matrix& s22() const { return s22_; }

  Matrix assemble() const {
    Matrix full(n() + k(), n() + k());
    full.topLeftCorner(n(), n()) = s11_;
    full.topRightCorner(n(), k()) = s12_;
    full.bottomLeftCorner(k(), n()) = s12_.transpose();
    full.bottomRightCorner(k(), k()) = s22_;
    return full;
  }

  // Conditional covariance of the observed block given the latent one.
  Matrix conditional_cov() const {
    Eigen::LLT<Matrix> l22(s22_);
    if (l22.info() != Eigen::Success) {
      throw SingularityError("LiftedCov: S22 block is not positive definite");
    }
    Matrix cond = s11_ - s12_ * l22.solve(s12_.transpose());
    detail::symmetrize(cond);
    return cond;
  }

  bool in_target_family(const CovMatrix& target, double tol = 1e-8) const {
    if (target.dim() != n()) return false;
    return (s11_ - target.mat()).norm() <= tol * (1.0 + target.mat().norm());
  }

  bool in_factor_family(double tol = kFactorFamilyTol) const {
    Eigen::LLT<Matrix> l22(s22_);
    if (l22.info() != Eigen::Success) return false;
    Matrix cond = s11_ - s12_ * l22.solve(s12_.transpose());
    cond.diagonal().setZero();
    return cond.norm() <= tol * std::max(s11_.norm(), 1e-300);
  }

 private:
  Matrix s11_;
  Matrix s12_;
  Matrix s22_;
};

inline DivergenceValue i_div(const LiftedCov& a, const LiftedCov& b) {
  return i_div(a.assemble(), b.assemble());
}

// Projection of `sigma` onto the family with fixed observed block: the
// unique divergence minimizer over that family, explicitly
//   [[T,            T W          ],
//    [W^T T,  S22 - S21 W + W^T T W]],   W = S11^{-1} S12,  T = target.
// The achieved value is I(proj || sigma) = I(target || S11), and the
// projection satisfies the Pythagorean rule measured by
// pythagoras_residual_first.
inline LiftedCov first_partial_min(const CovMatrix& target, const LiftedCov& sigma) {
  if (target.dim() != sigma.n()) {
    throw DimensionError("first_partial_min: target dimension does not match");
  }
  Eigen::LLT<Matrix> l11(sigma.s11());
  if (l11.info() != Eigen::Success) {
    throw SingularityError("first_partial_min: S11 block is not positive definite");
  }
  const Matrix w = l11.solve(sigma.s12());
  const Matrix& t = target.mat();
  Matrix s22_new = sigma.s22() - sigma.s12().transpose() * w + w.transpose() * t * w;
  detail::symmetrize(s22_new);
  return LiftedCov(t, t * w, std::move(s22_new));
}

struct SecondPartialMin {
  FactorParams params;  // optimal (H, d)
  Matrix q;             // latent root actually used
  LiftedCov projected;  // differs from the input only in the observed block
};

namespace detail {

// Factor-family projection with a caller-supplied root of S22 (any Q with
// Q^T Q = S22). The projected matrix and the products H H^T, H Q, Q^T Q do
// not depend on which root is used.
inline SecondPartialMin second_partial_min_with_root(const LiftedCov& sigma, const Matrix& q) {
  const Matrix q_inv = guarded_inverse(q, "second_partial_min: S22 root");
  Eigen::LLT<Matrix> l22(sigma.s22());
  if (l22.info() != Eigen::Success) {
    throw SingularityError("second_partial_min: S22 block is not positive definite");
  }
  Matrix cond = sigma.s11() - sigma.s12() * l22.solve(sigma.s12().transpose());
  symmetrize(cond);

  Matrix h = sigma.s12() * q_inv;
  Vector d = cond.diagonal();

  Matrix upper = sigma.s11() - cond;
  upper.diagonal() += cond.diagonal();
  symmetrize(upper);

  return SecondPartialMin{FactorParams(std::move(h), std::move(d)), q,
                          LiftedCov(std::move(upper), sigma.s12(), sigma.s22())};
}

}  // namespace detail

// Projection of `sigma` onto the factor family, using the symmetric PSD
// root of S22 so that repeated runs produce identical loadings. The
// achieved value is I(sigma || proj) = I(C || delta(C)) for the conditional
// covariance C, and the noise diagonal of the projection is strictly
// positive whenever `sigma` is positive definite.
inline SecondPartialMin second_partial_min(const LiftedCov& sigma) {
  return detail::second_partial_min_with_root(sigma, psd_sqrt(sigma.s22()));
}

struct ConstrainedSecondPartialMin {
  FactorParams params;
  LiftedCov projected;
};

// Factor-family projection with the latent covariance pinned to P0. Costs
// I(S22 || P0) more than the unconstrained projection, and coincides with
// it exactly when P0 equals S22.
inline ConstrainedSecondPartialMin constrained_second_partial_min(const LiftedCov& sigma,
                                                                  const Matrix& p0) {
  if (p0.rows() != sigma.k() || p0.cols() != sigma.k()) {
    throw DimensionError("constrained_second_partial_min: P0 must be k x k");
  }
  Matrix p0_sym = p0;
  const double scale = std::max(p0.norm(), 1e-300);
  if ((p0 - p0.transpose().eval()).norm() > kSymmetryTol * scale) {
    throw AsymmetryError("constrained_second_partial_min: P0 is not symmetric");
  }
  detail::symmetrize(p0_sym);
  Eigen::LLT<Matrix> lp0(p0_sym);
  if (lp0.info() != Eigen::Success) {
    throw SingularityError("constrained_second_partial_min: P0 is not positive definite");
  }
  Eigen::LLT<Matrix> l22(sigma.s22());
  if (l22.info() != Eigen::Success) {
    throw SingularityError("constrained_second_partial_min: S22 block is not positive definite");
  }

  const Matrix w = l22.solve(sigma.s12().transpose());  // S22^{-1} S21
  Matrix cond = sigma.s11() - sigma.s12() * w;
  detail::symmetrize(cond);

  Matrix upper = w.transpose() * p0_sym * w;
  upper.diagonal() += cond.diagonal();
  detail::symmetrize(upper);
  Matrix cross = w.transpose() * p0_sym;

  const Matrix q0 = psd_sqrt(p0_sym);
  Matrix h = w.transpose() * q0;

  return ConstrainedSecondPartialMin{FactorParams(std::move(h), cond.diagonal()),
                                     LiftedCov(std::move(upper), std::move(cross), p0_sym)};
}

// Pythagorean defect I(S0 || S) - I(S0 || S*) - I(S* || S) around the
// target-family projection S* of S; the target is read off the observed
// block of S0. Exact in exact arithmetic.
inline double pythagoras_residual_first(const LiftedCov& sigma0, const LiftedCov& sigma) {
  CovMatrix target(sigma0.s11());
  target.require_pd("pythagoras_residual_first: observed block of S0");
  const LiftedCov proj = first_partial_min(target, sigma);
  return i_div(sigma0, sigma).raw() - i_div(sigma0, proj).raw() - i_div(proj, sigma).raw();
}

// Pythagorean defect I(S || S1) - I(S || S*) - I(S* || S1) around the
// factor-family projection S* of S; S1 must belong to the factor family.
inline double pythagoras_residual_second(const LiftedCov& sigma, const LiftedCov& sigma1) {
  if (!sigma1.in_factor_family()) {
    throw StructureError("pythagoras_residual_second: S1 is not factor-structured");
  }
  const LiftedCov proj = second_partial_min(sigma).projected;
  return i_div(sigma, sigma1).raw() - i_div(sigma, proj).raw() - i_div(proj, sigma1).raw();
}

}  // namespace ifa
