#pragma once

#include <cstdint>
#include <sstream>
#include <utility>

#include "ifa/divergence.hpp"
#include "ifa/matrix.hpp"
#include "ifa/params.hpp"
#include "ifa/rng.hpp"
#include "ifa/solvers.hpp"

namespace ifa {

// Synthetic problem recipe: S = A A^T + c * diag(d) with A an n x m matrix
// of uniform [0,1) entries and d a length-n vector of uniform [0,1) entries.
struct GeneratorSpec {
  Index n;
  Index m;
  double c;
  std::uint64_t seed;

  void validate() const {
    if (n < 1 || m < 1 || m > n) throw DimensionError("GeneratorSpec: requires 1 <= m <= n");
    if (c < 0.0) throw DomainError("GeneratorSpec: c must be nonnegative");
  }
};

struct GeneratedProblem {
  CovMatrix sigma;
  Matrix a;  // ground truth low-rank factor
  Vector d;  // ground truth diagonal weights (unscaled)
  double c;
  bool positive_definite;  // false only for the degenerate c = 0, m < n case
};

// Assembly hook shared by the generator and by tests that pin A and d.
inline GeneratedProblem sigma_from_ground_truth(Matrix a, Vector d, double c) {
  if (a.rows() < 1 || d.size() != a.rows()) {
    throw DimensionError("sigma_from_ground_truth: shape mismatch");
  }
  if (c < 0.0) throw DomainError("sigma_from_ground_truth: c must be nonnegative");
  Matrix sigma = a * a.transpose();
  detail::symmetrize(sigma);
  sigma.diagonal() += c * d;
  CovMatrix cov(std::move(sigma));
  const bool pd = cov.is_pd();
  return GeneratedProblem{std::move(cov), std::move(a), std::move(d), c, pd};
}

// Deterministic per seed: A is filled row by row, then d, from one
// SplitMix64 stream.
inline GeneratedProblem generate_sigma(const GeneratorSpec& spec) {
  spec.validate();
  SplitMix64 gen(spec.seed);
  Matrix a(spec.n, spec.m);
  for (Index i = 0; i < spec.n; ++i) {
    for (Index j = 0; j < spec.m; ++j) a(i, j) = gen.next_double();
  }
  Vector d(spec.n);
  for (Index i = 0; i < spec.n; ++i) d(i) = gen.next_double();
  return sigma_from_ground_truth(std::move(a), std::move(d), spec.c);
}

// Covariance of N stacked observation rows. The zero-mean convention is the
// default; centering is opt-in. Fewer rows than columns gives a singular
// (PSD-only) result, which CovMatrix::is_pd reports.
inline CovMatrix sample_covariance(const Matrix& data, bool center = false) {
  const Index rows = data.rows();
  const Index cols = data.cols();
  if (rows < 1 || cols < 1) throw DimensionError("sample_covariance: empty data");
  Matrix centered = data;
  if (center) centered.rowwise() -= data.colwise().mean();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(rows);
  detail::symmetrize(cov);
  return CovMatrix(std::move(cov));
}

struct ExactFaCheck {
  bool exact;
  double offdiag_norm;
};

// A covariance admits an exact factor model with the trailing noise block
// zero if and only if the conditional covariance of the leading block given
// the trailing one is diagonal. The tolerance is relative to the leading
// block's norm so badly scaled inputs behave.
inline ExactFaCheck exact_fa_check(const CovMatrix& sigma_hat, const BlockSplit& split,
                                   double rel_tol = 1e-8) {
  if (split.dim() != sigma_hat.dim()) {
    throw DimensionError("exact_fa_check: split does not match covariance dimension");
  }
  Matrix cond = schur_complement(sigma_hat, split);
  cond.diagonal().setZero();
  const double norm = cond.norm();
  const double scale =
      std::max(sigma_hat.mat().topLeftCorner(split.n1, split.n1).norm(), 1e-300);
  return ExactFaCheck{norm <= rel_tol * scale, norm};
}

// Exact realization when the check passes: with R the symmetric root of the
// trailing block,
//   H = [[S12 R^{-1}, 0], [R, 0]],   d = [diag(conditional covariance); 0],
// reproducing S12, S22 and the full covariance exactly.
inline FactorParams exact_fa_realization(const CovMatrix& sigma_hat, const BlockSplit& split,
                                         Index k) {
  if (split.dim() != sigma_hat.dim()) {
    throw DimensionError("exact_fa_realization: split does not match covariance dimension");
  }
  if (split.n2 < 1) {
    throw DimensionError("exact_fa_realization: split requires n2 >= 1");
  }
  if (split.n2 > k) {
    std::ostringstream os;
    os << "exact_fa_realization: infeasible, n2 = " << split.n2 << " exceeds k = " << k;
    throw InfeasiblePatternError(os.str());
  }
  const ExactFaCheck chk = exact_fa_check(sigma_hat, split);
  if (!chk.exact) {
    std::ostringstream os;
    os << "exact_fa_realization: conditional covariance is not diagonal (off-diagonal norm "
       << chk.offdiag_norm << ")";
    throw NotRealizableError(os.str());
  }
  const Index n1 = split.n1;
  const Index n2 = split.n2;
  const Matrix s22 = sigma_hat.mat().bottomRightCorner(n2, n2);
  const Matrix root = psd_sqrt(s22);
  const Matrix root_inv = detail::guarded_inverse(root, "exact_fa_realization: root of S22");
  const Matrix cond = schur_complement(sigma_hat, split);

  Matrix h = Matrix::Zero(n1 + n2, k);
  h.topLeftCorner(n1, n2) = sigma_hat.mat().topRightCorner(n1, n2) * root_inv;
  h.block(n1, 0, n2, n2) = root;
  Vector d = Vector::Zero(n1 + n2);
  d.head(n1) = cond.diagonal();

  FactorParams params(std::move(h), std::move(d));
  const double err = (params.model() - sigma_hat.mat()).norm();
  if (err > chk.offdiag_norm + 1e-10 * sigma_hat.mat().norm()) {
    std::ostringstream os;
    os << "exact_fa_realization: reconstruction residual " << err << " unexpectedly large";
    throw Error(os.str());
  }
  return params;
}

// Residuals of the structure a stationary point with a trailing zero-noise
// block must carry: the trailing covariance blocks are matched exactly and
// the projected leading loading solves the reduced stationarity equations.
struct StructureReport {
  double corner_residual;     // ||S22 - H2 H2^T||
  double cross_residual;      // ||S12 - H1 H2^T||
  double reduced_h_residual;  // ||Ht - C (Ht Ht^T + D1)^{-1} Ht||
  double reduced_d_residual;  // ||D1 - delta(C - Ht Ht^T)||
};

inline StructureReport stationary_structure_check(const CovMatrix& sigma_hat,
                                                  const FactorParams& params,
                                                  const SingularPattern& pattern) {
  const Index n = sigma_hat.dim();
  if (params.n() != n || pattern.n1 + pattern.n2 != n) {
    throw DimensionError("stationary_structure_check: dimension mismatch");
  }
  const Index n1 = pattern.n1;
  const Index n2 = pattern.n2;
  const double dscale = std::max(1.0, params.d.cwiseAbs().maxCoeff());
  if (params.d.tail(n2).cwiseAbs().maxCoeff() > 1e-12 * dscale) {
    throw StructureError("stationary_structure_check: trailing noise block is not zero");
  }
  const Matrix h1 = params.H.topRows(n1);
  const Matrix h2 = params.H.bottomRows(n2);
  if (h2.colPivHouseholderQr().rank() < n2) {
    throw StructureError("stationary_structure_check: trailing loading block is rank deficient");
  }

  const Matrix s12 = sigma_hat.mat().topRightCorner(n1, n2);
  const Matrix s22 = sigma_hat.mat().bottomRightCorner(n2, n2);
  const Matrix gram2 = h2 * h2.transpose();

  StructureReport report{};
  report.corner_residual = (s22 - gram2).norm();
  report.cross_residual = (s12 - h1 * h2.transpose()).norm();

  Eigen::LLT<Matrix> lg(gram2);
  if (lg.info() != Eigen::Success) {
    throw StructureError("stationary_structure_check: H2 H2^T is not positive definite");
  }
  const Matrix projected = h1 - (h1 * h2.transpose()) * lg.solve(h2);  // H1 (I - P)
  const Matrix cond = schur_complement(sigma_hat, pattern.split());
  Matrix reduced_model = projected * projected.transpose();
  detail::symmetrize(reduced_model);
  const Matrix gram_reduced = reduced_model;
  reduced_model.diagonal() += params.d.head(n1);
  Eigen::LLT<Matrix> lr(reduced_model);
  if (lr.info() != Eigen::Success) {
    throw SingularityError("stationary_structure_check: reduced model is not positive definite");
  }
  report.reduced_h_residual = (projected - cond * lr.solve(projected)).norm();
  report.reduced_d_residual =
      (params.d.head(n1) - (cond.diagonal() - gram_reduced.diagonal())).norm();
  return report;
}

}  // namespace ifa
