#include <catch2/catch_amalgamated.hpp>

#include "ifa/divergence.hpp"
#include "test_support.hpp"

using namespace ifa;
using namespace ifa::testing;
using Catch::Approx;

TEST_CASE("i_div explicit values") {
  const Matrix i2 = Matrix::Identity(2, 2);
  REQUIRE(i_div(i2, i2).nats() == 0.0);

  Matrix s1(1, 1), s2(1, 1);
  s1 << 2;
  s2 << 1;
  // 1/2 (log(1/2) - 1 + 2)
  REQUIRE(i_div(s1, s2).raw() == Approx(0.15342640972002733).epsilon(1e-12));

  REQUIRE(i_div(Matrix(2.0 * i2), i2).raw() == Approx(1.0 - std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("i_div edge behaviour") {
  const Matrix i2 = Matrix::Identity(2, 2);
  Matrix singular(2, 2);
  singular << 1, 1, 1, 1;
  const DivergenceValue inf = i_div(i2, singular);
  REQUIRE(!inf.is_finite());
  REQUIRE(std::isinf(inf.nats()));

  REQUIRE_THROWS_AS(i_div(singular, i2), DomainError);
  REQUIRE_THROWS_AS(i_div(i2, Matrix::Identity(3, 3)), DimensionError);

  // Values inside the clamp band report as exactly zero but keep the raw.
  const DivergenceValue tiny(5e-13);
  REQUIRE(tiny.nats() == 0.0);
  REQUIRE(tiny.raw() == 5e-13);
}

TEST_CASE("i_div_with_means adds the quadratic term") {
  Matrix s(1, 1);
  s << 1;
  Vector mu0(1), mu1(1);
  mu0 << 0;
  mu1 << 1;
  REQUIRE(i_div_with_means(mu1, s, mu1, s).nats() == 0.0);
  REQUIRE(i_div_with_means(mu1, s, mu0, s).raw() == Approx(0.5));

  SplitMix64 gen(31);
  const Matrix s1 = random_spd(gen, 3);
  const Matrix s2 = random_spd(gen, 3);
  const Vector zero = Vector::Zero(3);
  REQUIRE(i_div_with_means(zero, s1, zero, s2).raw() == Approx(i_div(s1, s2).raw()));
}

TEST_CASE("objective evaluates the model divergence") {
  SplitMix64 gen(5);
  const FactorParams params = random_factor_params(gen, 4, 2);
  const CovMatrix exact(params.model());
  REQUIRE(objective(exact, params).nats() == 0.0);

  // Zero loading against the diagonal part of the target.
  const CovMatrix sigma(random_spd(gen, 4));
  const FactorParams diag_only(Matrix::Zero(4, 1), sigma.mat().diagonal());
  REQUIRE(objective(sigma, diag_only).raw() ==
          Approx(i_div(sigma.mat(), delta(sigma.mat())).raw()));

  Matrix target(2, 2);
  target << 1.5, 1, 1, 1.5;
  Matrix h(2, 1);
  h << 1, 1;
  const FactorParams reconstructing(h, Vector::Constant(2, 0.5));
  REQUIRE(objective(CovMatrix(target), reconstructing).nats() == 0.0);

  // Singular model: zero loading and zero noise on one coordinate.
  Vector d_sing(4);
  d_sing << 1, 1, 1, 0;
  const FactorParams singular_model(Matrix::Zero(4, 1), d_sing);
  REQUIRE(!objective(sigma, singular_model).is_finite());
}

TEST_CASE("divergence is nonnegative and separates matrices") {
  SplitMix64 gen(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(gen.next_u64() % 5);
    const Matrix s1 = random_spd(gen, n);
    const Matrix s2 = random_spd(gen, n);
    REQUIRE(i_div(s1, s2).raw() >= -1e-12);

    // Inputs within 1e-7 of each other have divergence inside the clamp.
    Matrix close = s1;
    close(0, 0) += 5e-8;
    close(0, 1) -= 3e-8;
    close(1, 0) -= 3e-8;
    REQUIRE(i_div(s1, close).raw() <= 1e-10);
    REQUIRE(i_div(s1, close).nats() <= 1e-10);

    // Clearly separated inputs have divergence clearly above the clamp.
    Matrix far = s1;
    far.diagonal().array() += 1e-3;
    REQUIRE(i_div(s1, far).raw() > 1e-10);
  }
}

TEST_CASE("congruence invariance under invertible transforms") {
  SplitMix64 gen(17);
  for (int trial = 0; trial < 40; ++trial) {
    const Index n = 2 + static_cast<Index>(gen.next_u64() % 4);
    const Matrix p = random_spd(gen, n);
    const Matrix q = random_spd(gen, n);
    Matrix a = random_matrix(gen, n, n);
    a.diagonal().array() += 2.0;  // keep it invertible and well conditioned
    Matrix ap = a * p * a.transpose();
    Matrix aq = a * q * a.transpose();
    const double base = i_div(p, q).raw();
    const double transformed =
        i_div(Matrix(0.5 * (ap + ap.transpose())), Matrix(0.5 * (aq + aq.transpose()))).raw();
    REQUIRE(std::abs(transformed - base) <= 1e-9 * (1.0 + std::abs(base)));
  }
}

TEST_CASE("objective is invariant under orthogonal loading rotations") {
  SplitMix64 gen(29);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 3 + static_cast<Index>(gen.next_u64() % 4);
    const Index k = 1 + static_cast<Index>(gen.next_u64() % 3);
    const CovMatrix sigma(random_spd(gen, n));
    const FactorParams params = random_factor_params(gen, n, k);
    const Matrix u = random_orthogonal(gen, k);
    const FactorParams rotated(params.H * u, params.d);
    REQUIRE(objective(sigma, rotated).raw() ==
            Approx(objective(sigma, params).raw()).margin(1e-11));
  }
}

namespace {

// Admissible parameters for the zero-trailing-noise split: reduced loading
// layout with invertible trailing block.
FactorParams random_singular_params(SplitMix64& gen, Index n1, Index n2, Index k) {
  Matrix h = Matrix::Zero(n1 + n2, k);
  h.topLeftCorner(n1, k - n2) = random_matrix(gen, n1, k - n2);
  h.topRightCorner(n1, n2) = random_matrix(gen, n1, n2);
  Matrix h22 = random_matrix(gen, n2, n2);
  h22.diagonal().array() += 2.0;
  h.bottomRightCorner(n2, n2) = h22;
  Vector d = Vector::Zero(n1 + n2);
  d.head(n1) = random_vector(gen, n1, 0.5, 1.5);
  return FactorParams(std::move(h), std::move(d));
}

}  // namespace

TEST_CASE("singular objective split sums to the objective") {
  SplitMix64 gen(101);

  SECTION("exact model gives three zero terms") {
    const FactorParams params = random_singular_params(gen, 2, 1, 2);
    const CovMatrix sigma(params.model());
    const SingularObjectiveSplit split =
        singular_div_decomposition(sigma, params, BlockSplit(2, 1));
    REQUIRE(std::abs(split.reduced_div) < 1e-10);
    REQUIRE(std::abs(split.corner_div) < 1e-10);
    REQUIRE(std::abs(split.coupling_half_trace) < 1e-10);
  }

  SECTION("matching the border blocks zeroes the second and third terms") {
    const Index n1 = 2, n2 = 1, k = 2;
    const CovMatrix sigma(random_spd(gen, n1 + n2));
    const Matrix s22 = sigma.mat().bottomRightCorner(n2, n2);
    const Matrix s12 = sigma.mat().topRightCorner(n1, n2);
    const Matrix h22 = psd_sqrt(s22);
    Matrix h = Matrix::Zero(n1 + n2, k);
    h.topLeftCorner(n1, k - n2) = random_matrix(gen, n1, k - n2);
    h.topRightCorner(n1, n2) = s12 * dense_inverse(s22) * h22;
    h.bottomRightCorner(n2, n2) = h22;
    Vector d = Vector::Zero(n1 + n2);
    d.head(n1) = random_vector(gen, n1, 0.5, 1.5);
    const SingularObjectiveSplit split =
        singular_div_decomposition(sigma, FactorParams(h, d), BlockSplit(n1, n2));
    REQUIRE(std::abs(split.corner_div) < 1e-10);
    REQUIRE(std::abs(split.coupling_half_trace) < 1e-10);
    REQUIRE(split.reduced_div > 0.0);
  }

  SECTION("random admissible instances") {
    for (int trial = 0; trial < 40; ++trial) {
      const FactorParams params = random_singular_params(gen, 2, 1, 2);
      const CovMatrix sigma(random_spd(gen, 3));
      const SingularObjectiveSplit split =
          singular_div_decomposition(sigma, params, BlockSplit(2, 1));
      const double direct = objective(sigma, params).raw();
      REQUIRE(std::abs(split.total() - direct) <= 1e-9 * (1.0 + std::abs(direct)));
      REQUIRE(split.coupling_half_trace >= -1e-12);
    }
  }

  SECTION("violated block pattern") {
    const FactorParams params = random_singular_params(gen, 2, 1, 2);
    Vector bad_d = params.d;
    bad_d(2) = 0.3;  // trailing entry must be zero
    REQUIRE_THROWS_AS(
        singular_div_decomposition(CovMatrix(random_spd(gen, 3)), FactorParams(params.H, bad_d),
                                   BlockSplit(2, 1)),
        StructureError);

    Matrix bad_h = params.H;
    bad_h(2, 0) = 0.7;  // breaks the reduced zero block
    REQUIRE_THROWS_AS(
        singular_div_decomposition(CovMatrix(random_spd(gen, 3)), FactorParams(bad_h, params.d),
                                   BlockSplit(2, 1)),
        StructureError);
  }
}
