#pragma once

// Shared generators and independent oracles for the test suites. Everything
// here stays off the library's computational paths on purpose: inverses go
// through Eigen's general-purpose routines, optima through brute force.

#include <cmath>

#include "ifa/ifa.hpp"

namespace ifa::testing {

inline Matrix random_matrix(SplitMix64& gen, Index rows, Index cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = lo + (hi - lo) * gen.next_double();
  }
  return m;
}

inline Vector random_vector(SplitMix64& gen, Index size, double lo, double hi) {
  Vector v(size);
  for (Index i = 0; i < size; ++i) v(i) = lo + (hi - lo) * gen.next_double();
  return v;
}

// Well-conditioned random SPD matrix G G^T / n + ridge I.
inline Matrix random_spd(SplitMix64& gen, Index n, double ridge = 0.5) {
  const Matrix g = random_matrix(gen, n, n);
  Matrix m = g * g.transpose() / static_cast<double>(n);
  m = 0.5 * (m + m.transpose().eval());
  m.diagonal().array() += ridge;
  return m;
}

inline Matrix random_orthogonal(SplitMix64& gen, Index n) {
  const Matrix g = random_matrix(gen, n, n);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix the sign convention so the result is deterministic.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

inline LiftedCov random_lifted_pd(SplitMix64& gen, Index n, Index k, double ridge = 0.5) {
  const Matrix full = random_spd(gen, n + k, ridge);
  return LiftedCov::from_assembled(full, n);
}

inline FactorParams random_factor_params(SplitMix64& gen, Index n, Index k) {
  return FactorParams(random_matrix(gen, n, k), random_vector(gen, n, 0.5, 1.5));
}

// Independent dense inverse used as an oracle against the block formulas.
inline Matrix dense_inverse(const Matrix& m) { return m.inverse(); }

inline double rel_err(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

}  // namespace ifa::testing
