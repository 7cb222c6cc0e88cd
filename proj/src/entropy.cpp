#include "livi/entropy.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace livi {

std::string_view to_string(EntropyMethod m) {
  switch (m) {
    case EntropyMethod::FullJacobian: return "full-jacobian";
    case EntropyMethod::SvBound: return "sv-bound";
    case EntropyMethod::NaiveMc: return "naive-mc";
    case EntropyMethod::ImportanceSampled: return "importance-sampled";
  }
  return "unknown";
}

double entropy_constant(std::size_t m) {
  const double md = static_cast<double>(m);
  return 0.5 * md + 0.5 * md * std::log(2.0 * std::numbers::pi);
}

namespace {

constexpr double kStructuralZero = 1e-12;

void summarize(EntropyEstimate& e) {
  const double n = static_cast<double>(e.per_sample.size());
  double s = 0.0;
  for (double v : e.per_sample) s += v;
  e.value = s / n;
  e.n_outer = e.per_sample.size();
  if (e.per_sample.size() > 1) {
    double ss = 0.0;
    for (double v : e.per_sample) ss += (v - e.value) * (v - e.value);
    e.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
}

void check_batch(const DlvmConfig& cfg, const Matrix& zs) {
  cfg.validate();
  if (zs.rows() == 0) throw ContractError("entropy: latent batch is empty");
  if (static_cast<std::size_t>(zs.cols()) != cfg.latent_dim())
    throw DimensionError("entropy: latent batch has " + std::to_string(zs.cols()) + " columns, expected " +
                         std::to_string(cfg.latent_dim()));
}

double log_mean_exp(const Vector& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().mean());
}

double log_std_normal(const Vector& z) {
  return -0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

Vector normals(RngStream& rng, Eigen::Index n) {
  Vector v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

double logdet_exact(const Matrix& j, double sigma2) {
  if (!(sigma2 > 0.0)) throw DomainError("logdet_exact: sigma^2 must be positive");
  const auto m = static_cast<double>(j.rows());
  Eigen::BDCSVD<Matrix> svd(j);
  const Vector s = svd.singularValues();
  double acc = 0.0;
  double counted = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) < kStructuralZero) continue;
    acc += std::log(s(i) * s(i) + sigma2);
    counted += 1.0;
  }
  return 0.5 * acc + 0.5 * (m - counted) * std::log(sigma2);
}

double logdet_sv_bound_term(double s1_squared, std::size_t d, std::size_t m, double sigma2) {
  return 0.5 * static_cast<double>(d) * std::log(s1_squared + sigma2) +
         0.5 * (static_cast<double>(m) - static_cast<double>(d)) * std::log(sigma2);
}

EntropyEstimate entropy_full_jacobian(const DlvmConfig& cfg, const Matrix& zs, bool differentiable) {
  check_batch(cfg, zs);
  const std::size_t m = cfg.output_dim(), d = cfg.latent_dim();
  const double c = entropy_constant(m);
  const double floor_term = 0.5 * (static_cast<double>(m) - static_cast<double>(d)) * std::log(cfg.sigma2);
  EntropyEstimate e;
  e.method = EntropyMethod::FullJacobian;
  if (!differentiable) {
    for (Eigen::Index i = 0; i < zs.rows(); ++i)
      e.per_sample.push_back(logdet_exact(jacobian_values(cfg.generator, zs.row(i).transpose()), cfg.sigma2) + c);
    summarize(e);
    return e;
  }
  std::vector<Var> terms;
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    auto j = jacobian(cfg.generator, ag::constant(Tensor::from(Vector(zs.row(i).transpose())))).matrix;
    auto gram = ag::add_diagonal(ag::matmul(ag::transpose(j), j), cfg.sigma2);
    auto t = ag::scale(ag::logdet_spd(gram), 0.5);
    e.per_sample.push_back(t.item() + floor_term + c);
    terms.push_back(t);
  }
  e.graph = ag::add_scalar(ag::mean(ag::concat(terms)), floor_term + c);
  summarize(e);
  return e;
}

EntropyEstimate entropy_sv_bound(const DlvmConfig& cfg, const Matrix& zs, RngStream& rng, bool differentiable,
                                 const SvBoundOptions& opts) {
  check_batch(cfg, zs);
  const std::size_t m = cfg.output_dim(), d = cfg.latent_dim();
  const double c = entropy_constant(m);
  const double floor_term = 0.5 * (static_cast<double>(m) - static_cast<double>(d)) * std::log(cfg.sigma2);
  const bool dense_ok = m * d <= kDenseEntryLimit;
  EntropyEstimate e;
  e.method = EntropyMethod::SvBound;
  std::vector<Var> terms;
  auto* warm = opts.warm_start;
  if (warm) warm->resize(static_cast<std::size_t>(zs.rows()));
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    const Vector z = zs.row(i).transpose();
    LobpcgOptions lo = opts.lobpcg;
    if (warm && static_cast<std::size_t>((*warm)[static_cast<std::size_t>(i)].size()) == d)
      lo.initial = (*warm)[static_cast<std::size_t>(i)];
    LobpcgResult r;
    Matrix j;
    if (dense_ok) {
      j = jacobian_values(cfg.generator, z);
      r = lobpcg_min([&](const Vector& v) -> Vector { return j.transpose() * (j * v); }, d, rng, lo);
    } else {
      JacobianOperator op(cfg.generator, z);
      r = lobpcg_min([&](const Vector& v) { return op.gram_apply(v); }, d, rng, lo);
    }
    e.lobpcg_iterations += r.iterations;
    if (r.near_degenerate) ++e.near_degenerate;
    if (!r.converged) {
      if (!(opts.dense_fallback && dense_ok))
        throw EstimatorError("sv-bound: LOBPCG did not converge after " + std::to_string(r.iterations) +
                             " iterations (residual " + std::to_string(r.residual) + ")");
      const auto spec = dense_svd(j);
      r.eigenvalue = spec.values.front() * spec.values.front();
      r.eigenvector = spec.right.col(0);
      ++e.dense_fallbacks;
    }
    if (warm) (*warm)[static_cast<std::size_t>(i)] = r.eigenvector;
    if (differentiable) {
      auto rho = rayleigh_sv_squared(cfg.generator, z, r.eigenvector);
      auto t = ag::scale(ag::elementwise(ag::add_scalar(rho, cfg.sigma2), Activation::Log),
                         0.5 * static_cast<double>(d));
      e.per_sample.push_back(t.item() + floor_term + c);
      terms.push_back(t);
    } else {
      e.per_sample.push_back(logdet_sv_bound_term(r.eigenvalue, d, m, cfg.sigma2) + c);
    }
  }
  if (differentiable) e.graph = ag::add_scalar(ag::mean(ag::concat(terms)), floor_term + c);
  summarize(e);
  return e;
}

EntropyEstimate entropy_naive_mc(const DlvmConfig& cfg, std::size_t n_outer, std::size_t n_inner, RngStream& rng) {
  cfg.validate();
  if (n_outer == 0 || n_inner == 0) throw ContractError("naive entropy: sample counts must be positive");
  const auto d = static_cast<Eigen::Index>(cfg.latent_dim());
  const double sd = std::sqrt(cfg.sigma2);
  EntropyEstimate e;
  e.method = EntropyMethod::NaiveMc;
  Matrix inner(static_cast<Eigen::Index>(n_inner), d);
  for (std::size_t o = 0; o < n_outer; ++o) {
    const Vector z = normals(rng, d);
    const Vector theta = forward_values(cfg.generator, z) + sd * normals(rng, static_cast<Eigen::Index>(cfg.output_dim()));
    for (Eigen::Index k = 0; k < inner.size(); ++k) inner.data()[k] = rng.normal();
    const Matrix g = forward_values_batch(cfg.generator, inner);
    Vector logq(g.rows());
    for (Eigen::Index k = 0; k < g.rows(); ++k)
      logq(k) = log_gaussian_isotropic(theta, g.row(k).transpose(), cfg.sigma2);
    e.per_sample.push_back(-log_mean_exp(logq));
  }
  summarize(e);
  return e;
}

IsDensity importance_log_density(const DlvmConfig& cfg, const Vector& theta, const Vector& z_gen, std::size_t n_is,
                                 RngStream& rng, const IsOptions& opts) {
  cfg.validate();
  if (n_is == 0) throw ContractError("importance sampling: n_is must be positive");
  const auto d = static_cast<Eigen::Index>(cfg.latent_dim());
  if (z_gen.size() != d || static_cast<std::size_t>(theta.size()) != cfg.output_dim())
    throw DimensionError("importance sampling: theta or latent has the wrong length");
  const double sd = std::sqrt(cfg.sigma2);
  const double half_d_log2pi = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  const Vector g_gen = forward_values(cfg.generator, z_gen);
  const Matrix j = jacobian_values(cfg.generator, z_gen);
  Matrix zk(static_cast<Eigen::Index>(n_is), d);
  Vector logq_prop(zk.rows());

  if (opts.proposal == IsProposal::LinearisedPosterior) {
    // Posterior of z under theta ~ N(mu + J z, sigma^2 I), z ~ N(0, I):
    // covariance sigma^2 K^{-1}, mean K^{-1} J^T (theta - mu), K = J^T J + sigma^2 I.
    Matrix k = j.transpose() * j;
    k.diagonal().array() += cfg.sigma2;
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) throw EstimatorError("importance sampling: proposal covariance is singular");
    const Vector mu = g_gen - j * z_gen;
    const Vector mean = llt.solve(j.transpose() * (theta - mu));
    // sigma^2 K^{-1} = (sigma U^{-1})(sigma U^{-1})^T with K = U^T U.
    const Matrix factor = sd * Matrix(llt.matrixU()).triangularView<Eigen::Upper>().solve(Matrix::Identity(d, d));
    double logdet_cov = 2.0 * static_cast<double>(d) * std::log(sd);
    for (Eigen::Index i = 0; i < d; ++i) logdet_cov -= 2.0 * std::log(llt.matrixL()(i, i));
    for (Eigen::Index s = 0; s < zk.rows(); ++s) {
      const Vector eps = normals(rng, d);
      zk.row(s) = (mean + factor * eps).transpose();
      logq_prop(s) = -half_d_log2pi - 0.5 * logdet_cov - 0.5 * eps.squaredNorm();
    }
  } else {
    const double s_bar = Eigen::BDCSVD<Matrix>(j).singularValues().mean();
    const double tau = s_bar > kStructuralZero ? opts.tau_scale * sd / s_bar : 1.0;
    for (Eigen::Index s = 0; s < zk.rows(); ++s) {
      const Vector eps = normals(rng, d);
      zk.row(s) = (z_gen + tau * eps).transpose();
      logq_prop(s) = -half_d_log2pi - static_cast<double>(d) * std::log(tau) - 0.5 * eps.squaredNorm();
    }
  }

  const Matrix g = forward_values_batch(cfg.generator, zk);
  Vector logw(zk.rows());
  for (Eigen::Index s = 0; s < zk.rows(); ++s)
    logw(s) = log_gaussian_isotropic(theta, g.row(s).transpose(), cfg.sigma2) + log_std_normal(zk.row(s).transpose()) -
              logq_prop(s);
  IsDensity out;
  out.log_q = log_mean_exp(logw);
  if (!std::isfinite(out.log_q)) throw EstimatorError("importance sampling: all weights vanished");
  out.log_weight_spread = logw.maxCoeff() - logw.minCoeff();
  return out;
}

EntropyEstimate entropy_importance_sampled(const DlvmConfig& cfg, std::size_t n_outer, std::size_t n_is,
                                           RngStream& rng, const IsOptions& opts) {
  cfg.validate();
  if (n_outer == 0 || n_is == 0) throw ContractError("importance-sampled entropy: sample counts must be positive");
  const auto d = static_cast<Eigen::Index>(cfg.latent_dim());
  const auto m = static_cast<Eigen::Index>(cfg.output_dim());
  const double sd = std::sqrt(cfg.sigma2);
  EntropyEstimate e;
  e.method = EntropyMethod::ImportanceSampled;
  for (std::size_t o = 0; o < n_outer; ++o) {
    const Vector z_gen = normals(rng, d);
    const Vector theta = forward_values(cfg.generator, z_gen) + sd * normals(rng, m);
    e.per_sample.push_back(-importance_log_density(cfg, theta, z_gen, n_is, rng, opts).log_q);
  }
  summarize(e);
  return e;
}

double entropy_linearised_untruncated(const DlvmConfig& cfg, const Matrix& zs) {
  check_batch(cfg, zs);
  const auto d = static_cast<Eigen::Index>(cfg.latent_dim());
  const double m = static_cast<double>(cfg.output_dim());
  double total = 0.0;
  for (Eigen::Index i = 0; i < zs.rows(); ++i) {
    const Vector z = zs.row(i).transpose();
    const Matrix j = jacobian_values(cfg.generator, z);
    Matrix k = j.transpose() * j;
    k.diagonal().array() += cfg.sigma2;
    const Vector kz = k.ldlt().solve(z);
    const Vector s = Eigen::BDCSVD<Matrix>(j).singularValues();
    double trace_term = m - static_cast<double>(d);
    for (Eigen::Index t = 0; t < s.size(); ++t) trace_term += cfg.sigma2 / (s(t) * s(t) + cfg.sigma2);
    const double quad = z.squaredNorm() - cfg.sigma2 * z.dot(kz);
    total += 0.5 * m * std::log(2.0 * std::numbers::pi) + logdet_exact(j, cfg.sigma2) + 0.5 * (quad + trace_term);
  }
  return total / static_cast<double>(zs.rows());
}

}  // namespace livi
