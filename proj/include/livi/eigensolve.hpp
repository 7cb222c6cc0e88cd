#pragma once

// Smallest eigenpair of J^T J from matrix-vector products only, the dense
// reference spectrum, and the Rayleigh quotient as a graph value.

#include "livi/generator.hpp"
#include "livi/rng.hpp"
#include "livi/tensor.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace livi {

using LinearMap = std::function<Vector(const Vector&)>;

struct LobpcgOptions {
  double tol = 1e-6;
  std::size_t max_iter = 200;
  /// Optional preconditioner applied to residuals; identity when empty.
  LinearMap preconditioner;
  /// Warm start; a random normal vector otherwise.
  std::optional<Vector> initial;
};

struct LobpcgResult {
  double eigenvalue = 0.0;
  Vector eigenvector;
  std::size_t iterations = 0;
  bool converged = false;
  double residual = 0.0;
  /// Rayleigh quotient after each iteration, starting with the initial vector.
  std::vector<double> history;
  /// Smallest two Ritz values closer than 1e-8 * eigenvalue.
  bool near_degenerate = false;
};

/// Block-size-one LOBPCG for the smallest eigenvalue of a symmetric positive
/// semidefinite operator of dimension d. Converged when
/// ||A v - lambda v|| < tol * (largest Ritz value seen).
LobpcgResult lobpcg_min(const LinearMap& matvec, std::size_t d, RngStream& rng, const LobpcgOptions& opts = {});

/// Singular values ascending, with matching singular vector columns.
struct SingularSpectrum {
  std::vector<double> values;
  Matrix left;   // m x k
  Matrix right;  // d x k
};

inline constexpr std::size_t kDenseEntryLimit = 1'000'000;

/// Thin SVD; CapacityError above kDenseEntryLimit entries.
SingularSpectrum dense_svd(const Matrix& j);

/// ||J(z) v||^2 / ||v||^2 with v held constant; differentiable in the generator params.
Var rayleigh_sv_squared(const GeneratorModel& gen, const Vector& z, const Vector& v);

}  // namespace livi
