#pragma once

// Gaussian deep latent variable model q(theta) = E_z N(theta | g(z), sigma^2 I).

#include "livi/generator.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace livi {

struct DlvmConfig {
  GeneratorModel generator;
  double sigma2 = 1e-4;

  std::size_t latent_dim() const { return generator.latent_dim(); }
  std::size_t output_dim() const { return generator.output_dim(); }
  /// Throws ConfigError unless sigma2 > 0.
  void validate() const;
};

/// Row i holds one draw: thetas = g(zs) + etas.
struct PosteriorSampleSet {
  Matrix thetas;
  Matrix zs;
  Matrix etas;
  /// Per-draw log observation-noise variance, for samplers that carry it.
  std::optional<Vector> log_noise_var;

  std::size_t size() const { return static_cast<std::size_t>(thetas.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(thetas.cols()); }
};

/// One reparameterised draw whose theta is a graph value in the generator params.
struct GraphDraw {
  Var theta;
  Vector z;
  Vector eta;
};

PosteriorSampleSet sample(const DlvmConfig& cfg, std::size_t n, RngStream& rng);
std::vector<GraphDraw> sample_graph(const DlvmConfig& cfg, std::size_t n, RngStream& rng);

/// log N(theta | g(z), sigma^2 I).
double log_conditional(const DlvmConfig& cfg, const Vector& theta, const Vector& z);
/// Same density with g(z) already evaluated.
double log_gaussian_isotropic(const Vector& theta, const Vector& mean, double sigma2);

/// N(mu, J J^T + sigma^2 I) with mu = g(z') - J z', the linearisation at z'.
struct LinearisedMarginal {
  Vector mean;
  Matrix jacobian;
  double sigma2 = 0.0;

  Matrix covariance() const;
  /// Evaluated through the d x d Woodbury form; never builds the m x m inverse.
  double log_density(const Vector& theta) const;
};

LinearisedMarginal linearised_marginal(const DlvmConfig& cfg, const Vector& z_prime);

/// Header theta_0..theta_{m-1}, z_0..z_{d-1}; one row per draw.
void write_samples_csv(const PosteriorSampleSet& s, std::ostream& out);

}  // namespace livi
