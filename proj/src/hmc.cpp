#include "livi/errors.hpp"
#include "livi/inference.hpp"

#include <cmath>

namespace livi {

void HmcConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("hmc: step size must be positive");
  if (leapfrog_steps == 0 || n_samples == 0) throw ConfigError("hmc: leapfrog steps and sample count must be positive");
  if (!(mass > 0.0)) throw ConfigError("hmc: mass must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("hmc: target acceptance must be in (0, 1)");
  if (!(divergence_threshold > 0.0)) throw ConfigError("hmc: divergence threshold must be positive");
}

double hamiltonian(const LeapfrogState& s, double mass) { return 0.5 * s.p.squaredNorm() / mass - s.log_density; }

LeapfrogState leapfrog(const LogDensityFn& f, LeapfrogState s, double step_size, std::size_t steps, double mass) {
  for (std::size_t i = 0; i < steps; ++i) {
    s.p += 0.5 * step_size * s.grad;
    s.x += (step_size / mass) * s.p;
    s.log_density = f(s.x, s.grad);
    if (!std::isfinite(s.log_density)) break;
    s.p += 0.5 * step_size * s.grad;
  }
  return s;
}

HmcResult hmc_sample_target(const LogDensityFn& f, Vector x0, const HmcConfig& cfg, RngStream& rng) {
  cfg.validate();
  LeapfrogState cur;
  cur.x = std::move(x0);
  cur.log_density = f(cur.x, cur.grad);
  if (!std::isfinite(cur.log_density)) throw DomainError("hmc: log density is not finite at the initial point");

  // Dual averaging of log step size.
  double eps = cfg.step_size;
  const double mu = std::log(10.0 * eps), gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double h_bar = 0.0, log_eps_bar = 0.0;

  HmcResult res;
  res.samples.resize(static_cast<Eigen::Index>(cfg.n_samples), cur.x.size());
  std::size_t accepted = 0;
  const std::size_t total = cfg.n_warmup + cfg.n_samples;
  const double sd = std::sqrt(cfg.mass);
  for (std::size_t it = 0; it < total; ++it) {
    cur.p.resize(cur.x.size());
    for (Eigen::Index i = 0; i < cur.p.size(); ++i) cur.p(i) = sd * rng.normal();
    const double h0 = hamiltonian(cur, cfg.mass);
    LeapfrogState prop = leapfrog(f, cur, eps, cfg.leapfrog_steps, cfg.mass);
    const double err = hamiltonian(prop, cfg.mass) - h0;
    const bool divergent = !std::isfinite(err) || err > cfg.divergence_threshold;
    const double accept_prob = divergent ? 0.0 : std::min(1.0, std::exp(-err));
    const double u = rng.uniform();
    const bool accept = !divergent && u < accept_prob;
    if (accept) cur = std::move(prop);
    if (divergent) ++(it < cfg.n_warmup ? res.warmup_divergences : res.divergences);

    if (it < cfg.n_warmup) {
      if (cfg.adapt_step_size) {
        const double m = static_cast<double>(it + 1);
        h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (cfg.target_accept - accept_prob) / (m + t0);
        const double log_eps = mu - std::sqrt(m) / gamma * h_bar;
        const double w = std::pow(m, -kappa);
        log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
        eps = it + 1 == cfg.n_warmup ? std::exp(log_eps_bar) : std::exp(log_eps);
      }
    } else {
      if (accept) ++accepted;
      res.samples.row(static_cast<Eigen::Index>(it - cfg.n_warmup)) = cur.x.transpose();
    }
  }
  res.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.n_samples);
  res.step_size = eps;
  return res;
}

BnnHmcResult hmc_sample(const HmcConfig& cfg, const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& data,
                        double prior_scale, const Vector& theta0, double log_noise_var0, RngStream& rng) {
  const auto m = static_cast<Eigen::Index>(bnn.param_count());
  if (theta0.size() != m) throw DimensionError("hmc: initial theta has the wrong length");
  const bool gaussian = lik.kind == LikelihoodKind::Gaussian;
  const auto x = ag::constant(Tensor::from(data.x));
  LogDensityFn f = [&](const Vector& v, Vector& grad) {
    auto theta = ag::parameter(Tensor::from(Vector(v.head(m))));
    auto out = bnn_forward(bnn, splice(bnn, theta), x);
    Var lnv;
    Var ll;
    if (gaussian) {
      lnv = ag::parameter(Tensor::scalar(v(m)));
      ll = gaussian_log_likelihood(out, data.y, lnv);
    } else {
      ll = log_likelihood(lik, out, data.y);
    }
    auto lp = ag::add(ll, log_prior(theta, prior_scale));
    ag::backward(lp);
    grad.resize(v.size());
    grad.head(m) = theta.grad().vec();
    if (gaussian) grad(m) = lnv.grad()[0];
    return lp.item();
  };
  Vector x0(gaussian ? m + 1 : m);
  x0.head(m) = theta0;
  if (gaussian) x0(m) = log_noise_var0;
  const auto r = hmc_sample_target(f, x0, cfg, rng);
  BnnHmcResult res;
  res.samples.thetas = r.samples.leftCols(m);
  if (gaussian) res.samples.log_noise_var = r.samples.col(m);
  res.acceptance_rate = r.acceptance_rate;
  res.divergences = r.divergences;
  res.warmup_divergences = r.warmup_divergences;
  res.step_size = r.step_size;
  return res;
}

}  // namespace livi
