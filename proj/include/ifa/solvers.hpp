#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ifa/divergence.hpp"
#include "ifa/lifted.hpp"
#include "ifa/matrix.hpp"
#include "ifa/params.hpp"
#include "ifa/rng.hpp"

namespace ifa {

// Diagonal noise entries below this flag an approach to the boundary of the
// feasible set, where the singular-noise engine is the right tool.
inline constexpr double kBoundaryDiagTol = 1e-10;
// Allowed floating-point slack when checking that the objective never
// increases along an iteration.
inline constexpr double kMonotonicitySlack = 1e-10;

struct SolverConfig {
  int max_iters = 1000;
  double div_tol = 1e-12;       // stop when the absolute divergence decrease falls below
  double residual_tol = 1e-10;  // stop when stationarity residuals fall below
  int record_every = 1;         // trace stride

  void validate() const {
    if (max_iters < 1) throw DomainError("SolverConfig: max_iters must be >= 1");
    if (!(div_tol > 0.0) || !(residual_tol > 0.0)) {
      throw DomainError("SolverConfig: tolerances must be positive");
    }
    if (record_every < 1) throw DomainError("SolverConfig: record_every must be >= 1");
  }
};

enum class Engine { Alt, Lpd, Hh, Em, Singular };

inline const char* to_string(Engine e) {
  switch (e) {
    case Engine::Alt: return "alt";
    case Engine::Lpd: return "lpd";
    case Engine::Hh: return "hh";
    case Engine::Em: return "em";
    case Engine::Singular: return "singular";
  }
  return "?";
}

inline Engine engine_from_string(const std::string& s) {
  if (s == "alt") return Engine::Alt;
  if (s == "lpd") return Engine::Lpd;
  if (s == "hh") return Engine::Hh;
  if (s == "em") return Engine::Em;
  if (s == "singular") return Engine::Singular;
  throw DomainError("unknown engine '" + s + "' (expected alt|lpd|hh|em|singular)");
}

enum class StopReason { FixedPoint, DivTol, ResidualTol, MaxIters, OneStep };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::FixedPoint: return "fixed point";
    case StopReason::DivTol: return "divergence tolerance";
    case StopReason::ResidualTol: return "residual tolerance";
    case StopReason::MaxIters: return "max iterations";
    case StopReason::OneStep: return "one-step convergence";
  }
  return "?";
}

// One recorded iterate. `gain` is the lifted per-step decrease
// decomposition for the alt engine and the plain divergence drop for the
// others; `r_h` is the always-defined loading residual
// ||H - S (H H^T + D)^{-1} H||.
struct TraceRow {
  int iter = 0;
  double divergence = 0.0;
  double l2 = 0.0;
  double gain = 0.0;
  double r_h = 0.0;
  double r_d = 0.0;
  double min_d = 0.0;
};

struct SolverTrace {
  Engine engine = Engine::Alt;
  double initial_divergence = 0.0;
  std::vector<TraceRow> rows;
  StopReason reason = StopReason::MaxIters;
  int iterations = 0;
  bool boundary_approach = false;       // some noise entry fell below kBoundaryDiagTol
  std::vector<Index> near_zero_diag;    // indices of those entries at the final iterate
  std::optional<FactorParams> final_params;
};

// Zero pattern for the constrained problem: the trailing n2 noise variances
// are pinned to zero. Feasibility additionally needs n2 <= k, checked where
// the latent dimension is known.
struct SingularPattern {
  Index n1;
  Index n2;

  SingularPattern(Index leading, Index trailing) : n1(leading), n2(trailing) {
    if (n1 < 1 || n2 < 1) throw DimensionError("SingularPattern requires n1 >= 1 and n2 >= 1");
  }

  BlockSplit split() const { return BlockSplit(n1, n2); }
};

namespace detail {

struct ModelOps {
  Matrix minv_h;         // (H H^T + D)^{-1} H
  Matrix second_moment;  // I - H^T (H H^T + D)^{-1} H + H^T (...)^{-1} S (...)^{-1} H
};

// Shared core of the update equations. When the noise diagonal is safely
// positive and n > 2k, only k x k systems are factored, using
// (H H^T + D)^{-1} H = D^{-1} H (I + H^T D^{-1} H)^{-1}.
inline ModelOps model_ops(const Matrix& sigma_hat, const Matrix& h, const Vector& d) {
  const Index k = h.cols();
  const Index n = h.rows();
  if (d.minCoeff() > kBoundaryDiagTol && n > 2 * k) {
    const Matrix w = d.cwiseInverse().asDiagonal() * h;
    Matrix g = Matrix::Identity(k, k) + h.transpose() * w;
    symmetrize(g);
    Eigen::LLT<Matrix> lg(g);
    if (lg.info() != Eigen::Success) {
      throw SingularityError("model_ops: I + H^T D^{-1} H is not positive definite");
    }
    Matrix minv_h = lg.solve(w.transpose()).transpose();
    Matrix r = lg.solve(Matrix::Identity(k, k)) + minv_h.transpose() * sigma_hat * minv_h;
    symmetrize(r);
    return ModelOps{std::move(minv_h), std::move(r)};
  }
  Matrix m = h * h.transpose();
  m.diagonal() += d;
  Eigen::LLT<Matrix> lm(m);
  if (lm.info() != Eigen::Success) {
    throw SingularityError("model_ops: H H^T + D is not positive definite");
  }
  Matrix minv_h = lm.solve(h);
  Matrix r = Matrix::Identity(k, k) - h.transpose() * minv_h +
             minv_h.transpose() * sigma_hat * minv_h;
  symmetrize(r);
  return ModelOps{std::move(minv_h), std::move(r)};
}

}  // namespace detail

// Conditional second moment E[X X^T | Y] of the latent factor under the
// current model, the k x k factor appearing in every update equation. It is
// symmetric positive definite whenever H H^T + D is.
inline Matrix latent_second_moment(const CovMatrix& sigma_hat, const FactorParams& params) {
  if (sigma_hat.dim() != params.n()) {
    throw DimensionError("latent_second_moment: dimension mismatch");
  }
  return detail::model_ops(sigma_hat.mat(), params.H, params.d).second_moment;
}

// One sweep of the alternating projections in loading coordinates:
//   H' = S (H H^T + D)^{-1} H R^{-1/2},   D' = delta(S - H' H'^T),
// with R the latent second moment and R^{-1/2} the inverse of its symmetric
// PSD root, so repeated runs produce identical loadings, not just identical
// models.
inline FactorParams alternating_step(const CovMatrix& sigma_hat, const FactorParams& params) {
  if (sigma_hat.dim() != params.n()) throw DimensionError("alternating_step: dimension mismatch");
  const detail::ModelOps ops = detail::model_ops(sigma_hat.mat(), params.H, params.d);
  const Matrix r_inv_sqrt = detail::psd_sqrt_and_inv(ops.second_moment).second;
  Matrix h_next = sigma_hat.mat() * ops.minv_h * r_inv_sqrt;
  Vector d_next = sigma_hat.mat().diagonal() - h_next.rowwise().squaredNorm();
  return FactorParams(std::move(h_next), std::move(d_next));
}

// The same sweep in (L, P, D) coordinates. No square root is taken inside
// the step; the latent covariance update absorbs it:
//   P' = P - P L^T M^{-1} (M - S) M^{-1} L P,   M = L P L^T + D,
//   L' = S M^{-1} L P P'^{-1},
//   D' = delta(S - L' P' L'^T).
inline LpdParams lpd_step(const CovMatrix& sigma_hat, const LpdParams& params) {
  if (sigma_hat.dim() != params.n()) throw DimensionError("lpd_step: dimension mismatch");
  const Matrix lp = params.L * params.P;
  Matrix m = lp * params.L.transpose();
  detail::symmetrize(m);
  m.diagonal() += params.d;
  Eigen::LLT<Matrix> lm(m);
  if (lm.info() != Eigen::Success) {
    throw SingularityError("lpd_step: L P L^T + D is not positive definite");
  }
  const Matrix t = lm.solve(lp);  // M^{-1} L P
  Matrix p_next = params.P - lp.transpose() * t + t.transpose() * sigma_hat.mat() * t;
  detail::symmetrize(p_next);
  Eigen::LLT<Matrix> lpn(p_next);
  if (lpn.info() != Eigen::Success) {
    throw SingularityError("lpd_step: updated latent covariance is not positive definite");
  }
  const Matrix st = sigma_hat.mat() * t;
  Matrix l_next = lpn.solve(st.transpose()).transpose();  // S M^{-1} L P P'^{-1}
  Vector d_next =
      sigma_hat.mat().diagonal() - ((l_next * p_next).cwiseProduct(l_next)).rowwise().sum();
  return LpdParams(std::move(l_next), std::move(p_next), std::move(d_next));
}

namespace detail {

// Nearest PSD matrix of rank at most `rank` by eigenvalue truncation.
// Iterating directly on the Gram matrix amplifies rounding perturbations
// off the rank-k PSD manifold (negative eigenvalues grow geometrically, and
// spurious extra-rank modes can take over), so long runs must re-project
// every sweep.
inline Matrix project_psd_rank(const Matrix& m, Index rank) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) throw Error("project_psd_rank: eigendecomposition failed");
  const Index n = m.rows();
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  if (rank >= 0) {
    for (Index i = 0; i < n - std::min(rank, n); ++i) ev(i) = 0.0;  // ascending order
  }
  Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  symmetrize(out);
  return out;
}

}  // namespace detail

// The same sweep on the rank-k Gram matrix G = H H^T directly:
//   G' = S (G + D)^{-1} G (D + S (G + D)^{-1} G)^{-1} S.
// Rank is preserved and no square root appears. A nonnegative `rank` also
// re-projects the result onto the PSD matrices of that rank, which the
// engine loop uses to keep long runs on the model manifold.
inline Matrix hh_step(const CovMatrix& sigma_hat, const Matrix& hh, const Vector& d,
                      Index rank = -1) {
  detail::require_square(hh, "hh_step");
  if (sigma_hat.dim() != hh.rows() || d.size() != hh.rows()) {
    throw DimensionError("hh_step: dimension mismatch");
  }
  Matrix m = hh;
  m.diagonal() += d;
  Eigen::LLT<Matrix> lm(m);
  if (lm.info() != Eigen::Success) {
    throw SingularityError("hh_step: H H^T + D is not positive definite");
  }
  const Matrix w = lm.solve(hh);
  Matrix b = sigma_hat.mat() * w;
  b.diagonal() += d;
  Eigen::FullPivLU<Matrix> lu(b);
  if (!lu.isInvertible()) {
    throw SingularityError("hh_step: D + S (H H^T + D)^{-1} H H^T is singular");
  }
  Matrix next = sigma_hat.mat() * w * lu.solve(sigma_hat.mat());
  detail::symmetrize(next);
  if (rank >= 0) next = detail::project_psd_rank(next, rank);
  return next;
}

// One EM sweep for the same objective:
//   H' = S (H H^T + D)^{-1} H R^{-1},   D' = delta(S - H' R H'^T),
// equal to the composition of the target-family projection with the
// latent-covariance-constrained factor projection, for any choice of the
// pinned covariance.
inline FactorParams em_step(const CovMatrix& sigma_hat, const FactorParams& params) {
  if (sigma_hat.dim() != params.n()) throw DimensionError("em_step: dimension mismatch");
  const detail::ModelOps ops = detail::model_ops(sigma_hat.mat(), params.H, params.d);
  Eigen::LLT<Matrix> lr(ops.second_moment);
  if (lr.info() != Eigen::Success) {
    throw SingularityError("em_step: latent second moment is not positive definite");
  }
  const Matrix sa = sigma_hat.mat() * ops.minv_h;
  Matrix h_next = lr.solve(sa.transpose()).transpose();
  Vector d_next = sigma_hat.mat().diagonal() -
                  ((h_next * ops.second_moment).cwiseProduct(h_next)).rowwise().sum();
  return FactorParams(std::move(h_next), std::move(d_next));
}

namespace detail {

// Reduced sweep against the conditional covariance C of the leading block:
// structurally identical to hh_step with C as the target.
inline std::pair<Matrix, Vector> singular_step_reduced(const Matrix& cond, const Matrix& h_tilde,
                                                       const Vector& d_tilde, Index rank = -1) {
  Matrix m = h_tilde;
  m.diagonal() += d_tilde;
  Eigen::LLT<Matrix> lm(m);
  if (lm.info() != Eigen::Success) {
    throw SingularityError("singular_step: reduced model is not positive definite");
  }
  const Matrix w = lm.solve(h_tilde);
  Matrix b = cond * w;
  b.diagonal() += d_tilde;
  Eigen::FullPivLU<Matrix> lu(b);
  if (!lu.isInvertible()) throw SingularityError("singular_step: inner matrix is singular");
  Matrix next_h = cond * w * lu.solve(cond);
  symmetrize(next_h);
  if (rank >= 0) next_h = project_psd_rank(next_h, rank);
  Vector next_d = cond.diagonal() - next_h.diagonal();
  clamp_nonneg(next_d, "singular_step");
  return {std::move(next_h), std::move(next_d)};
}

}  // namespace detail

// One sweep of the constrained recursion for a trailing zero-noise block.
// Only the n1 x n1 reduced state moves; the border blocks of the full-size
// iterate stay pinned to those of sigma_hat.
inline std::pair<Matrix, Vector> singular_step(const CovMatrix& sigma_hat, const Matrix& h_tilde,
                                               const Vector& d_tilde,
                                               const SingularPattern& pattern) {
  if (pattern.n1 + pattern.n2 != sigma_hat.dim()) {
    throw DimensionError("singular_step: pattern does not match covariance dimension");
  }
  if (h_tilde.rows() != pattern.n1 || h_tilde.cols() != pattern.n1 ||
      d_tilde.size() != pattern.n1) {
    throw DimensionError("singular_step: reduced state must be n1 x n1");
  }
  const Matrix cond = schur_complement(sigma_hat, pattern.split());
  return detail::singular_step_reduced(cond, h_tilde, d_tilde);
}

// Residuals of the stationarity (maximum likelihood) equations.
//   r_h  = ||H - (S - H H^T) D^{-1} H||     (needs D > 0)
//   r_h2 = ||H - S (H H^T + D)^{-1} H||     (always defined)
//   r_d  = ||D - delta(S - H H^T)||
struct StationarityResiduals {
  double r_h = 0.0;
  bool r_h_applicable = false;
  double r_h2 = 0.0;
  double r_d = 0.0;
};

inline StationarityResiduals stationarity_residuals(const CovMatrix& sigma_hat,
                                                    const FactorParams& params) {
  if (sigma_hat.dim() != params.n()) {
    throw DimensionError("stationarity_residuals: dimension mismatch");
  }
  const detail::ModelOps ops = detail::model_ops(sigma_hat.mat(), params.H, params.d);
  StationarityResiduals out;
  out.r_h2 = (params.H - sigma_hat.mat() * ops.minv_h).norm();
  out.r_d =
      (params.d - (sigma_hat.mat().diagonal() - params.H.rowwise().squaredNorm())).norm();
  out.r_h_applicable = params.d.minCoeff() > 0.0;
  if (out.r_h_applicable) {
    const Matrix dinv_h = params.d.cwiseInverse().asDiagonal() * params.H;
    out.r_h =
        (params.H - (sigma_hat.mat() - params.H * params.H.transpose()) * dinv_h).norm();
  } else {
    out.r_h = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// Per-step accounting for consecutive alternating-step iterates: the drop
// of the objective equals the sum of the divergences between consecutive
// lifted iterates on both families.
struct GainDecomposition {
  double div_drop = 0.0;
  double lifted_gain = 0.0;
};

inline GainDecomposition step_gain_decomposition(const CovMatrix& sigma_hat,
                                                 const FactorParams& at_t,
                                                 const FactorParams& at_t1) {
  const Matrix q = Matrix::Identity(at_t.k(), at_t.k());
  const LiftedCov s1_t = LiftedCov::from_params(at_t, q);
  const LiftedCov s0_t = first_partial_min(sigma_hat, s1_t);
  const LiftedCov s1_t1 = second_partial_min(s0_t).projected;
  const LiftedCov s0_t1 = first_partial_min(sigma_hat, s1_t1);
  GainDecomposition out;
  out.lifted_gain = i_div(s1_t1, s1_t).raw() + i_div(s0_t, s0_t1).raw();
  out.div_drop = objective(sigma_hat, at_t).raw() - objective(sigma_hat, at_t1).raw();
  return out;
}

namespace detail {

// Random full-column-rank loading scaled so that H H^T stays strictly below
// target/2 in the PSD order: with B = target^{-1/2} G, the largest singular
// value of B bounds G G^T against the target.
inline Matrix scaled_random_loading(const CovMatrix& target, Index k, SplitMix64& gen) {
  const Index n = target.dim();
  Matrix g(n, k);
  for (int attempt = 0; attempt < 16; ++attempt) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < k; ++j) g(i, j) = gen.next_symmetric();
    }
    if (g.colPivHouseholderQr().rank() == k) break;
  }
  const Matrix b = psd_sqrt_and_inv(target.mat()).second * g;
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(b.transpose() * b), Eigen::EigenvaluesOnly);
  const double gram_max = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  const double alpha = 0.99 * std::sqrt(0.5 / gram_max);
  return alpha * g;
}

}  // namespace detail

// Feasible starting point: random full-rank H0 with H0 H0^T strictly below
// sigma_hat/2, and D0 at half the target diagonal, so both D0 > 0 and
// delta(sigma_hat - D0) > 0 hold. Identical seeds give identical output.
inline FactorParams default_init(const CovMatrix& sigma_hat, Index k, std::uint64_t seed) {
  const Index n = sigma_hat.dim();
  if (k < 1 || k >= n) throw DimensionError("default_init: requires 1 <= k < n");
  sigma_hat.require_pd("default_init");
  SplitMix64 gen(seed);
  Matrix h0 = detail::scaled_random_loading(sigma_hat, k, gen);
  Vector d0 = 0.5 * sigma_hat.mat().diagonal();
  return FactorParams(std::move(h0), std::move(d0));
}

// Engine states beyond plain (H, d).
struct HhState {
  Matrix hh;  // n x n PSD of rank <= k
  Vector d;
  Index k;
};

struct SingularState {
  SingularPattern pattern;
  Index k;         // latent dimension of the full model
  Matrix h_tilde;  // n1 x n1 PSD of rank <= k - n2
  Vector d_tilde;  // n1 free noise variances
};

using SolverInit = std::variant<FactorParams, LpdParams, HhState, SingularState>;

// Matched starting points across the equivalent engines: identical (H, d)
// mapped into each engine's coordinates.
inline SolverInit make_init(Engine engine, const FactorParams& params) {
  switch (engine) {
    case Engine::Alt:
    case Engine::Em:
      return params;
    case Engine::Lpd:
      return LpdParams(params.H, Matrix::Identity(params.k(), params.k()), params.d);
    case Engine::Hh:
      return HhState{params.H * params.H.transpose(), params.d, params.k()};
    case Engine::Singular:
      throw DomainError("make_init: use make_singular_init for the singular engine");
  }
  throw DomainError("make_init: unknown engine");
}

// Default starting point for the constrained engine: a feasible reduced
// state against the conditional covariance of the leading block.
inline SolverInit make_singular_init(const CovMatrix& sigma_hat, const SingularPattern& pattern,
                                     Index k, std::uint64_t seed) {
  if (pattern.n1 + pattern.n2 != sigma_hat.dim()) {
    throw DimensionError("make_singular_init: pattern does not match covariance dimension");
  }
  if (pattern.n2 > k) {
    std::ostringstream os;
    os << "make_singular_init: infeasible pattern, n2 = " << pattern.n2 << " exceeds k = " << k;
    throw InfeasiblePatternError(os.str());
  }
  CovMatrix cond(schur_complement(sigma_hat, pattern.split()));
  cond.require_pd("make_singular_init: conditional covariance");
  const Index k_reduced = k - pattern.n2;
  Vector d0 = 0.5 * cond.mat().diagonal();
  if (k_reduced == 0) {
    return SingularState{pattern, k, Matrix::Zero(pattern.n1, pattern.n1), std::move(d0)};
  }
  SplitMix64 gen(seed);
  const Matrix h0 = detail::scaled_random_loading(cond, std::min(k_reduced, pattern.n1), gen);
  return SingularState{pattern, k, h0 * h0.transpose(), std::move(d0)};
}

namespace detail {

// n x k factor of a PSD matrix from its leading eigenpairs; trailing
// columns are zero when the rank is below k.
inline Matrix rank_factor(const Matrix& psd, Index k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(psd);
  if (es.info() != Eigen::Success) throw Error("rank_factor: eigendecomposition failed");
  const Index n = psd.rows();
  Matrix h = Matrix::Zero(n, k);
  const Index take = std::min(k, n);
  for (Index j = 0; j < take; ++j) {
    const Index src = n - 1 - j;  // eigenvalues come sorted ascending
    const double lambda = std::max(es.eigenvalues()(src), 0.0);
    h.col(j) = std::sqrt(lambda) * es.eigenvectors().col(src);
  }
  return h;
}

}  // namespace detail

// Driver for all five engines. Iterates until the divergence decrease falls
// below div_tol, the stationarity residuals fall below residual_tol, or
// max_iters is reached; records the trace at the configured stride plus the
// final iterate. A divergence increase beyond the floating-point slack is
// an internal error and throws MonotonicityError with a diagnostic dump.
inline SolverTrace run(Engine engine, const CovMatrix& sigma_hat, const SolverInit& init,
                       const SolverConfig& config) {
  config.validate();
  sigma_hat.require_pd("run: sigma_hat");
  const Matrix& target = sigma_hat.mat();

  std::optional<FactorParams> fp;
  std::optional<LpdParams> lpd;
  std::optional<HhState> hh;
  std::optional<SingularState> sg;
  Matrix cond;  // singular engine: conditional covariance target

  switch (engine) {
    case Engine::Alt:
    case Engine::Em:
      if (!std::holds_alternative<FactorParams>(init)) {
        throw DomainError("run: engine expects FactorParams init");
      }
      fp = std::get<FactorParams>(init);
      if (fp->n() != sigma_hat.dim()) throw DimensionError("run: init dimension mismatch");
      break;
    case Engine::Lpd:
      if (!std::holds_alternative<LpdParams>(init)) {
        throw DomainError("run: engine expects LpdParams init");
      }
      lpd = std::get<LpdParams>(init);
      if (lpd->n() != sigma_hat.dim()) throw DimensionError("run: init dimension mismatch");
      break;
    case Engine::Hh:
      if (!std::holds_alternative<HhState>(init)) {
        throw DomainError("run: engine expects HhState init");
      }
      hh = std::get<HhState>(init);
      if (hh->hh.rows() != sigma_hat.dim() || hh->d.size() != sigma_hat.dim()) {
        throw DimensionError("run: init dimension mismatch");
      }
      break;
    case Engine::Singular: {
      if (!std::holds_alternative<SingularState>(init)) {
        throw DomainError("run: engine expects SingularState init");
      }
      sg = std::get<SingularState>(init);
      if (sg->pattern.n1 + sg->pattern.n2 != sigma_hat.dim()) {
        throw DimensionError("run: pattern does not match covariance dimension");
      }
      if (sg->pattern.n2 > sg->k) {
        std::ostringstream os;
        os << "run: infeasible pattern, n2 = " << sg->pattern.n2 << " exceeds k = " << sg->k;
        throw InfeasiblePatternError(os.str());
      }
      cond = schur_complement(sigma_hat, sg->pattern.split());
      break;
    }
  }

  // The compared quantities: full model against sigma_hat, or the reduced
  // model against the conditional covariance for the singular engine (the
  // border blocks of the full-size iterate are pinned and cancel).
  auto model = [&]() -> Matrix {
    if (fp) return fp->model();
    if (lpd) return lpd->model();
    if (hh) {
      Matrix m = hh->hh;
      m.diagonal() += hh->d;
      return m;
    }
    Matrix m = sg->h_tilde;
    m.diagonal() += sg->d_tilde;
    return m;
  };
  const Matrix& compare_target = sg ? cond : target;

  SolverTrace trace;
  trace.engine = engine;

  Matrix cur_model = model();
  {
    const DivergenceValue d0 = i_div(compare_target, cur_model);
    if (!d0.is_finite()) throw NotPsdError("run: initial model is not positive definite");
    trace.initial_divergence = d0.raw();
  }
  double raw = trace.initial_divergence;
  const double target_scale = compare_target.norm();

  const bool singular_one_step = sg && (sg->k == sg->pattern.n2);
  StopReason reason = StopReason::MaxIters;
  int t = 0;

  for (t = 1; t <= config.max_iters; ++t) {
    const std::optional<FactorParams> prev_fp = fp;
    const Matrix prev_model = cur_model;

    if (engine == Engine::Alt) {
      fp = alternating_step(sigma_hat, *fp);
    } else if (engine == Engine::Em) {
      fp = em_step(sigma_hat, *fp);
    } else if (engine == Engine::Lpd) {
      lpd = lpd_step(sigma_hat, *lpd);
    } else if (engine == Engine::Hh) {
      Matrix next = hh_step(sigma_hat, hh->hh, hh->d, hh->k);
      Vector d_next = target.diagonal() - next.diagonal();
      detail::clamp_nonneg(d_next, "run: hh engine");
      hh->hh = std::move(next);
      hh->d = std::move(d_next);
    } else {
      auto [h_next, d_next] = detail::singular_step_reduced(cond, sg->h_tilde, sg->d_tilde,
                                                            sg->k - sg->pattern.n2);
      sg->h_tilde = std::move(h_next);
      sg->d_tilde = std::move(d_next);
    }

    cur_model = model();
    const DivergenceValue dv = i_div(compare_target, cur_model);
    if (!dv.is_finite()) throw SingularityError("run: iterate model became singular");
    const double new_raw = dv.raw();
    const double drop = raw - new_raw;
    if (drop < -kMonotonicitySlack) {
      std::ostringstream os;
      os << "run: objective increased on engine " << to_string(engine) << " at iteration "
         << t << ": " << raw << " -> " << new_raw << " (increase " << -drop << ")";
      throw MonotonicityError(os.str());
    }

    // Residuals and boundary bookkeeping for this iterate.
    double r_h2 = 0.0;
    double r_d = 0.0;
    double min_d = 0.0;
    if (fp || lpd) {
      const FactorParams as_factor = fp ? *fp : lpd->to_factor();
      const StationarityResiduals res = stationarity_residuals(sigma_hat, as_factor);
      r_h2 = res.r_h2;
      r_d = res.r_d;
      min_d = as_factor.d.minCoeff();
    } else if (hh) {
      Matrix m = hh->hh;
      m.diagonal() += hh->d;
      Eigen::LLT<Matrix> lm(m);
      r_h2 = lm.info() == Eigen::Success ? (hh->hh - target * lm.solve(hh->hh)).norm()
                                         : std::numeric_limits<double>::quiet_NaN();
      r_d = (hh->d - (target.diagonal() - hh->hh.diagonal())).norm();
      min_d = hh->d.minCoeff();
    } else {
      Matrix m = sg->h_tilde;
      m.diagonal() += sg->d_tilde;
      Eigen::LLT<Matrix> lm(m);
      r_h2 = lm.info() == Eigen::Success ? (sg->h_tilde - cond * lm.solve(sg->h_tilde)).norm()
                                         : std::numeric_limits<double>::quiet_NaN();
      r_d = (sg->d_tilde - (cond.diagonal() - sg->h_tilde.diagonal())).norm();
      min_d = sg->d_tilde.minCoeff();
    }
    if (!sg && min_d < kBoundaryDiagTol) trace.boundary_approach = true;

    double gain = drop;
    if (engine == Engine::Alt && prev_fp->d.minCoeff() > kBoundaryDiagTol &&
        fp->d.minCoeff() > kBoundaryDiagTol) {
      // At the boundary (singular D) the lifted iterates are not equivalent
      // laws and the decomposition is undefined; report the plain drop there.
      gain = step_gain_decomposition(sigma_hat, *prev_fp, *fp).lifted_gain;
    }

    bool stopping = false;
    if (singular_one_step) {
      reason = StopReason::OneStep;
      stopping = true;
    } else if ((cur_model - prev_model).norm() <= 1e-12 * (1.0 + target_scale)) {
      reason = StopReason::FixedPoint;
      stopping = true;
    } else if (drop < config.div_tol) {
      reason = StopReason::DivTol;
      stopping = true;
    } else if (std::max(r_h2, r_d) < config.residual_tol) {
      reason = StopReason::ResidualTol;
      stopping = true;
    }

    if (stopping || t % config.record_every == 0 || t == config.max_iters) {
      trace.rows.push_back(TraceRow{t, new_raw, (compare_target - cur_model).norm(), gain, r_h2,
                                    r_d, min_d});
    }
    raw = new_raw;
    if (stopping) break;
  }

  trace.iterations = std::min(t, config.max_iters);
  trace.reason = reason;

  // Final parameters in loading coordinates, whatever the engine iterated.
  if (fp) {
    trace.final_params = *fp;
  } else if (lpd) {
    trace.final_params = lpd->to_factor();
  } else if (hh) {
    trace.final_params = FactorParams(detail::rank_factor(hh->hh, hh->k), hh->d);
  } else {
    const Index n1 = sg->pattern.n1;
    const Index n2 = sg->pattern.n2;
    const Index k_reduced = sg->k - n2;
    const Matrix s22 = target.bottomRightCorner(n2, n2);
    const Matrix h22 = psd_sqrt(s22);
    Eigen::LLT<Matrix> l22(s22);
    if (l22.info() != Eigen::Success) {
      throw SingularityError("run: trailing covariance block is not positive definite");
    }
    Matrix h = Matrix::Zero(sg->pattern.n1 + n2, sg->k);
    if (k_reduced > 0) {
      h.topLeftCorner(n1, k_reduced) = detail::rank_factor(sg->h_tilde, k_reduced);
    }
    h.topRightCorner(n1, n2) = target.topRightCorner(n1, n2) * l22.solve(h22);
    h.bottomRightCorner(n2, n2) = h22;
    Vector d_full = Vector::Zero(n1 + n2);
    d_full.head(n1) = sg->d_tilde;
    trace.final_params = FactorParams(std::move(h), std::move(d_full));
  }

  for (Index i = 0; i < trace.final_params->d.size(); ++i) {
    const bool pinned = sg && i >= sg->pattern.n1;
    if (!pinned && trace.final_params->d[i] < kBoundaryDiagTol) {
      trace.near_zero_diag.push_back(i);
    }
  }

  return trace;
}

}  // namespace ifa
