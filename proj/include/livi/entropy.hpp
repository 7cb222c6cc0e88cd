#pragma once

// Entropy estimators for the Gaussian latent variable model: the linearised
// full-Jacobian estimate, its smallest-singular-value lower bound, naive
// nested Monte Carlo, and an importance-sampled reference.

#include "livi/dlvm.hpp"
#include "livi/eigensolve.hpp"

#include <optional>
#include <string_view>

namespace livi {

enum class EntropyMethod { FullJacobian, SvBound, NaiveMc, ImportanceSampled };

std::string_view to_string(EntropyMethod m);

struct EntropyEstimate {
  double value = 0.0;
  EntropyMethod method = EntropyMethod::FullJacobian;
  std::size_t n_outer = 0;
  std::optional<double> std_error;
  /// Scalar graph value equal to `value`, when requested.
  Var graph;
  /// Per-z values whose mean is `value`.
  std::vector<double> per_sample;
  /// sv-bound only: dense fallbacks after LOBPCG non-convergence, and
  /// near-degenerate smallest eigenvalues.
  std::size_t dense_fallbacks = 0;
  std::size_t near_degenerate = 0;
  std::size_t lobpcg_iterations = 0;
};

/// m/2 + (m/2) log 2 pi.
double entropy_constant(std::size_t m);

/// 1/2 log det(J J^T + sigma^2 I) from the singular values of J. Singular
/// values below 1e-12 count as structural zeros.
double logdet_exact(const Matrix& j, double sigma2);

/// (d/2) log(s_1^2 + sigma^2) + ((m - d)/2) log sigma^2 for an m x d J.
double logdet_sv_bound_term(double s1_squared, std::size_t d, std::size_t m, double sigma2);

/// Mean over rows of zs of 1/2 log det(J J^T + sigma^2 I) + c. The graph
/// path goes through a Cholesky factor of J^T J + sigma^2 I.
EntropyEstimate entropy_full_jacobian(const DlvmConfig& cfg, const Matrix& zs, bool differentiable = false);

struct SvBoundOptions {
  LobpcgOptions lobpcg;
  /// On LOBPCG non-convergence, use the dense spectrum when J fits in memory;
  /// otherwise raise EstimatorError.
  bool dense_fallback = true;
  /// Per-row starting vectors. Entries of matching length seed LOBPCG for the
  /// same row; on return every entry holds that row's eigenvector.
  std::vector<Vector>* warm_start = nullptr;
};

/// Mean over rows of zs of (d/2) log(s_1^2 + sigma^2) + ((m - d)/2) log sigma^2 + c.
/// The graph path uses the Rayleigh quotient at the frozen LOBPCG eigenvector.
EntropyEstimate entropy_sv_bound(const DlvmConfig& cfg, const Matrix& zs, RngStream& rng, bool differentiable = false,
                                 const SvBoundOptions& opts = {});

EntropyEstimate entropy_naive_mc(const DlvmConfig& cfg, std::size_t n_outer, std::size_t n_inner, RngStream& rng);

enum class IsProposal {
  /// Posterior of z under the generator linearised at the generating latent.
  LinearisedPosterior,
  /// N(z_gen, tau^2 I) with tau = tau_scale * sigma / mean singular value.
  Isotropic,
};

struct IsOptions {
  IsProposal proposal = IsProposal::LinearisedPosterior;
  double tau_scale = 0.1;
};

/// Importance-sampled log q(theta) with the proposal centred on z_gen.
struct IsDensity {
  double log_q = 0.0;
  /// max - min of the log importance weights; zero for an exact proposal.
  double log_weight_spread = 0.0;
};

IsDensity importance_log_density(const DlvmConfig& cfg, const Vector& theta, const Vector& z_gen, std::size_t n_is,
                                 RngStream& rng, const IsOptions& opts = {});

EntropyEstimate entropy_importance_sampled(const DlvmConfig& cfg, std::size_t n_outer, std::size_t n_is,
                                           RngStream& rng, const IsOptions& opts = {});

/// The linearised entropy before the small-noise limit is taken: the
/// quadratic term is evaluated at each z instead of being replaced by m/2.
double entropy_linearised_untruncated(const DlvmConfig& cfg, const Matrix& zs);

}  // namespace livi
