#pragma once

#include <sstream>
#include <utility>

#include "ifa/matrix.hpp"

namespace ifa {

namespace detail {

// Noise variances are nonnegative by contract; rounding from a subtraction
// may leave values a hair below zero, which get clamped. Anything clearly
// negative is a caller error.
inline void clamp_nonneg(Vector& d, const char* what) {
  if (d.size() == 0) return;
  const double tol = 1e-9 * std::max(1.0, d.cwiseAbs().maxCoeff());
  for (Index i = 0; i < d.size(); ++i) {
    if (d[i] < -tol) {
      std::ostringstream os;
      os << what << ": negative diagonal entry " << d[i] << " at index " << i;
      throw DomainError(os.str());
    }
    if (d[i] < 0.0) d[i] = 0.0;
  }
}

}  // namespace detail

// Factor model parameters: the n x k loading matrix H and the nonnegative
// diagonal d of the noise covariance. The model covariance is
// H H^T + diag(d).
struct FactorParams {
  Matrix H;
  Vector d;

  FactorParams(Matrix loading, Vector noise_diag)
      : H(std::move(loading)), d(std::move(noise_diag)) {
    if (H.rows() < 1 || H.cols() < 1) {
      throw DimensionError("FactorParams: loading matrix must be at least 1x1");
    }
    if (d.size() != H.rows()) {
      throw DimensionError("FactorParams: diagonal length does not match loading rows");
    }
    detail::clamp_nonneg(d, "FactorParams");
  }

  Index n() const { return H.rows(); }
  Index k() const { return H.cols(); }

  Matrix model() const {
    Matrix m = H * H.transpose();
    m.diagonal() += d;
    return m;
  }
};

// Alternative parametrization (L, P, d) with latent covariance P kept
// explicit; the model covariance is L P L^T + diag(d).
struct LpdParams {
  Matrix L;
  Matrix P;
  Vector d;

  LpdParams(Matrix loading, Matrix latent_cov, Vector noise_diag)
      : L(std::move(loading)), P(std::move(latent_cov)), d(std::move(noise_diag)) {
    if (L.rows() < 1 || L.cols() < 1) {
      throw DimensionError("LpdParams: loading matrix must be at least 1x1");
    }
    if (P.rows() != L.cols() || P.cols() != L.cols()) {
      throw DimensionError("LpdParams: latent covariance must be k x k");
    }
    if (d.size() != L.rows()) {
      throw DimensionError("LpdParams: diagonal length does not match loading rows");
    }
    const double scale = std::max(P.norm(), 1e-300);
    if ((P - P.transpose().eval()).norm() > kSymmetryTol * scale) {
      throw AsymmetryError("LpdParams: latent covariance is not symmetric");
    }
    detail::symmetrize(P);
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) {
      throw NotPsdError("LpdParams: latent covariance is not positive definite");
    }
    detail::clamp_nonneg(d, "LpdParams");
  }

  Index n() const { return L.rows(); }
  Index k() const { return L.cols(); }

  Matrix model() const {
    Matrix m = L * P * L.transpose();
    detail::symmetrize(m);
    m.diagonal() += d;
    return m;
  }

  // Equivalent (H, d) with H = L P^{1/2}; the model covariance is unchanged.
  FactorParams to_factor() const { return FactorParams(L * psd_sqrt(P), d); }
};

}  // namespace ifa
