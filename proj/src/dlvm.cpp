#include "livi/dlvm.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

namespace livi {

void DlvmConfig::validate() const {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
    throw ConfigError("dlvm: output variance must be positive, got " + std::to_string(sigma2));
}

namespace {

Vector draw_normal(RngStream& rng, std::size_t n, double scale) {
  Vector v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

PosteriorSampleSet sample(const DlvmConfig& cfg, std::size_t n, RngStream& rng) {
  cfg.validate();
  if (n == 0) throw ContractError("sample: n must be at least 1");
  const std::size_t d = cfg.latent_dim(), m = cfg.output_dim();
  const double sd = std::sqrt(cfg.sigma2);
  PosteriorSampleSet s;
  s.zs.resize(n, d);
  s.etas.resize(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    s.zs.row(i) = draw_normal(rng, d, 1.0).transpose();
    s.etas.row(i) = draw_normal(rng, m, sd).transpose();
  }
  s.thetas = forward_values_batch(cfg.generator, s.zs) + s.etas;
  return s;
}

std::vector<GraphDraw> sample_graph(const DlvmConfig& cfg, std::size_t n, RngStream& rng) {
  cfg.validate();
  if (n == 0) throw ContractError("sample_graph: n must be at least 1");
  const double sd = std::sqrt(cfg.sigma2);
  std::vector<GraphDraw> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    GraphDraw g;
    g.z = draw_normal(rng, cfg.latent_dim(), 1.0);
    g.eta = draw_normal(rng, cfg.output_dim(), sd);
    g.theta = forward(cfg.generator, ag::constant(Tensor::from(g.z))) + ag::constant(Tensor::from(g.eta));
    out.push_back(std::move(g));
  }
  return out;
}

double log_gaussian_isotropic(const Vector& theta, const Vector& mean, double sigma2) {
  if (theta.size() != mean.size()) throw DimensionError("log density: theta and mean lengths differ");
  const double m = static_cast<double>(theta.size());
  return -0.5 * m * std::log(2.0 * std::numbers::pi * sigma2) - (theta - mean).squaredNorm() / (2.0 * sigma2);
}

double log_conditional(const DlvmConfig& cfg, const Vector& theta, const Vector& z) {
  cfg.validate();
  if (static_cast<std::size_t>(theta.size()) != cfg.output_dim())
    throw DimensionError("log_conditional: theta has length " + std::to_string(theta.size()));
  return log_gaussian_isotropic(theta, forward_values(cfg.generator, z), cfg.sigma2);
}

Matrix LinearisedMarginal::covariance() const {
  Matrix c = jacobian * jacobian.transpose();
  c.diagonal().array() += sigma2;
  return c;
}

double LinearisedMarginal::log_density(const Vector& theta) const {
  const auto m = static_cast<double>(mean.size());
  const auto d = jacobian.cols();
  const Vector r = theta - mean;
  // C^{-1} = (I - J (sigma^2 I + J^T J)^{-1} J^T) / sigma^2
  Matrix k = jacobian.transpose() * jacobian;
  k.diagonal().array() += sigma2;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) throw DomainError("linearised marginal: Gram matrix is not positive definite");
  const Vector jr = jacobian.transpose() * r;
  const double quad = (r.squaredNorm() - jr.dot(llt.solve(jr))) / sigma2;
  double logdet_k = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) logdet_k += 2.0 * std::log(llt.matrixL()(i, i));
  const double logdet_c = logdet_k + (m - static_cast<double>(d)) * std::log(sigma2);
  return -0.5 * m * std::log(2.0 * std::numbers::pi) - 0.5 * logdet_c - 0.5 * quad;
}

LinearisedMarginal linearised_marginal(const DlvmConfig& cfg, const Vector& z_prime) {
  cfg.validate();
  LinearisedMarginal lm;
  lm.jacobian = jacobian_values(cfg.generator, z_prime);
  lm.mean = forward_values(cfg.generator, z_prime) - lm.jacobian * z_prime;
  lm.sigma2 = cfg.sigma2;
  return lm;
}

void write_samples_csv(const PosteriorSampleSet& s, std::ostream& out) {
  const auto m = s.thetas.cols(), d = s.zs.cols();
  for (Eigen::Index j = 0; j < m; ++j) out << (j ? "," : "") << "theta_" << j;
  for (Eigen::Index j = 0; j < d; ++j) out << ",z_" << j;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < s.thetas.rows(); ++i) {
    for (Eigen::Index j = 0; j < m; ++j) out << (j ? "," : "") << s.thetas(i, j);
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << s.zs(i, j);
    out << '\n';
  }
}

}  // namespace livi
