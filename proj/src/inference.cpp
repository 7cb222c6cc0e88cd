#include "livi/inference.hpp"

#include "livi/errors.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace livi {

std::string_view to_string(BoundKind b) { return b == BoundKind::FullJacobian ? "full-jacobian" : "sv-bound"; }

void TrainConfig::validate() const {
  if (elbo_samples == 0) throw ConfigError("train: elbo_samples must be >= 1");
  if (!(sigma2 > 0.0)) throw ConfigError("train: sigma2 must be positive");
  optimizer.validate();
  if (!(optimizer.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (steps == 0) throw ConfigError("train: steps must be positive");
  if (!(prior_scale > 0.0)) throw ConfigError("train: prior_scale must be positive");
  if (!(initial_noise_std > 0.0)) throw ConfigError("train: initial_noise_std must be positive");
  if (!(init_gain > 0.0) || !(mfvi_initial_std > 0.0)) throw ConfigError("train: initial scales must be positive");
  if (!(kl_warmup_fraction >= 0.0 && kl_warmup_fraction <= 1.0))
    throw ConfigError("train: kl_warmup_fraction must be in [0, 1]");
  if (!(lobpcg.tol > 0.0) || lobpcg.max_iter == 0) throw ConfigError("train: LOBPCG tolerance and iterations must be positive");
}

namespace {

Var as_row(const Var& scalar) { return ag::reshape(scalar, Shape{1}); }

// Full data when batch_size is 0 or covers the set; otherwise a uniform
// subset without replacement and the N / |B| likelihood scale.
struct Batch {
  Dataset data;
  double scale = 1.0;
};

Batch select_batch(const Dataset& train, std::size_t batch_size, RngStream rng) {
  const std::size_t n = train.size();
  if (batch_size == 0 || batch_size >= n) return {train, 1.0};
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(batch_size);
  return {train.rows(idx), static_cast<double>(n) / static_cast<double>(batch_size)};
}

class Clock {
public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void reset_noise(LikelihoodModel& lik, const TrainConfig& tc) {
  if (lik.kind == LikelihoodKind::Gaussian) lik.log_noise_var.mutable_value()[0] = 2.0 * std::log(tc.initial_noise_std);
}

}  // namespace

BoundEvaluation livi_bound(const DlvmConfig& cfg, const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& batch,
                           double scale, const TrainConfig& tc, RngStream& rng, std::vector<Vector>* warm_start) {
  cfg.validate();
  if (cfg.output_dim() != bnn.param_count())
    throw DimensionError("livi bound: generator emits " + std::to_string(cfg.output_dim()) + " values, network has " +
                         std::to_string(bnn.param_count()) + " parameters");
  if (tc.elbo_samples == 0) throw ConfigError("livi bound: elbo_samples must be >= 1");
  const auto draws = sample_graph(cfg, tc.elbo_samples, rng);
  const auto x = ag::constant(Tensor::from(batch.x));
  std::vector<Var> lls, lps;
  BoundEvaluation ev;
  ev.zs.resize(static_cast<Eigen::Index>(draws.size()), static_cast<Eigen::Index>(cfg.latent_dim()));
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto& d = draws[s];
    ev.zs.row(static_cast<Eigen::Index>(s)) = d.z.transpose();
    lls.push_back(as_row(log_likelihood(lik, bnn_forward(bnn, splice(bnn, d.theta), x), batch.y, scale)));
    lps.push_back(as_row(log_prior(d.theta, tc.prior_scale)));
  }
  auto lik_term = ag::mean(ag::concat(lls));
  auto prior_term = ag::mean(ag::concat(lps));

  if (tc.bound == BoundKind::FullJacobian) {
    ev.entropy = entropy_full_jacobian(cfg, ev.zs, true);
  } else {
    RngStream lrng = rng.derive("lobpcg");
    SvBoundOptions opts;
    opts.lobpcg = tc.lobpcg;
    opts.dense_fallback = false;
    opts.warm_start = warm_start;
    ev.entropy = entropy_sv_bound(cfg, ev.zs, lrng, true, opts);
  }
  const double c = entropy_constant(cfg.output_dim());
  ev.total = ag::add(ag::add(lik_term, prior_term), ev.entropy.graph);
  ev.value.likelihood = lik_term.item();
  ev.value.prior = prior_term.item();
  ev.value.constant = c;
  ev.value.entropy = ev.entropy.graph.item() - c;
  ev.value.total = ev.total.item();
  return ev;
}

void TrainTrace::write_csv(std::ostream& out) const {
  out << "step,likelihood,prior,entropy,total,eta2\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.step << ',' << r.bound.likelihood << ',' << r.bound.prior << ',' << r.bound.entropy << ','
        << r.bound.total << ',' << r.noise_var << '\n';
}

void TrainTrace::write_timing_csv(std::ostream& out) const {
  out << "step,wall_seconds\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rows.size() && i < wall_seconds.size(); ++i)
    out << rows[i].step << ',' << wall_seconds[i] << '\n';
}

std::vector<double> TrainTrace::smoothed_total(std::size_t window) const {
  const std::size_t n = rows.size();
  std::vector<double> prefix(n + 1, 0.0), out(n);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + rows[i].bound.total;
  const std::size_t half = window / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0, hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

LiviResult livi_train(DlvmConfig& cfg, const BnnSpec& bnn, LikelihoodModel& lik, const Dataset& train,
                      const TrainConfig& tc, const CheckpointFn& checkpoint) {
  tc.validate();
  cfg.sigma2 = tc.sigma2;
  cfg.validate();
  if (cfg.output_dim() != bnn.param_count())
    throw DimensionError("livi train: generator output does not match the network parameter count");
  const RngStream root(tc.seed);
  RngStream init = root.derive("init");
  cfg.generator.initialize(init, tc.init_gain);
  if (tc.init_output_from_network) cfg.generator.set_output_bias(bnn_initial_theta(bnn, init));
  reset_noise(lik, tc);

  std::vector<Var> params{cfg.generator.params()};
  const bool train_noise = lik.kind == LikelihoodKind::Gaussian && tc.learn_noise;
  if (train_noise) params.push_back(lik.log_noise_var);
  Adam opt(params, tc.optimizer, tc.steps);
  const RngStream training = root.derive("training");

  LiviResult res;
  Tensor good = cfg.generator.params().value();
  double good_lnv = train_noise ? lik.log_noise_var.item() : 0.0;
  std::vector<Vector> warm;
  const Clock clock;
  auto lnv = [&] { return lik.kind == LikelihoodKind::Gaussian ? lik.log_noise_var.item() : 0.0; };
  std::size_t last_checkpoint = 0;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    RngStream srng = training.derive(step);
    const Batch b = select_batch(train, tc.batch_size, srng.derive("batch"));
    BoundEvaluation ev;
    try {
      ev = livi_bound(cfg, bnn, lik, b.data, b.scale, tc, srng, &warm);
    } catch (const EstimatorError& e) {
      throw EstimatorError("livi train, step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(ev.value.total)) {
      cfg.generator.set_params(good);
      if (train_noise) lik.log_noise_var.mutable_value()[0] = good_lnv;
      res.status.aborted = true;
      res.status.reason = "non-finite bound at step " + std::to_string(step);
      break;
    }
    good = cfg.generator.params().value();
    if (train_noise) good_lnv = lik.log_noise_var.item();
    res.status.last_good_step = step;
    res.trace.rows.push_back({step, ev.value, lik.noise_var()});
    res.trace.wall_seconds.push_back(clock.seconds());

    opt.zero_grad();
    ag::backward(ag::scale(ev.total, -1.0));
    opt.step();
    if (checkpoint && tc.checkpoint_every && (step + 1) % tc.checkpoint_every == 0) {
      checkpoint(step + 1, cfg.generator.params().value(), lnv());
      last_checkpoint = step + 1;
    }
  }
  if (checkpoint && last_checkpoint != res.trace.rows.size())
    checkpoint(res.status.aborted ? res.status.last_good_step : tc.steps, cfg.generator.params().value(), lnv());
  return res;
}

double kl_gaussian_diag(const Vector& mean, const Vector& log_std, double prior_scale) {
  if (mean.size() != log_std.size()) throw DimensionError("kl: mean and log_std differ in length");
  if (!(prior_scale > 0.0)) throw ConfigError("kl: prior scale must be positive");
  const double s2 = prior_scale * prior_scale;
  return ((std::log(prior_scale) - log_std.array()) + ((2.0 * log_std.array()).exp() + mean.array().square()) / (2.0 * s2) -
          0.5)
      .sum();
}

Var kl_gaussian_diag(const Var& mean, const Var& log_std, double prior_scale) {
  if (mean.shape() != log_std.shape()) throw DimensionError("kl: mean and log_std differ in shape");
  if (!(prior_scale > 0.0)) throw ConfigError("kl: prior scale must be positive");
  const double m = static_cast<double>(mean.size());
  const double s2 = prior_scale * prior_scale;
  auto var_sum = ag::sum(ag::elementwise(ag::scale(log_std, 2.0), Activation::Exp));
  auto quad = ag::scale(ag::add(var_sum, ag::dot(mean, mean)), 0.5 / s2);
  return ag::add_scalar(ag::sub(quad, ag::sum(log_std)), m * std::log(prior_scale) - 0.5 * m);
}

PosteriorSampleSet MeanFieldPosterior::sample(std::size_t n, RngStream& rng) const {
  if (n == 0) throw ContractError("mean-field sample: n must be positive");
  PosteriorSampleSet s;
  s.thetas.resize(static_cast<Eigen::Index>(n), mean.size());
  const Vector sd = log_std.array().exp();
  for (Eigen::Index i = 0; i < s.thetas.rows(); ++i)
    for (Eigen::Index j = 0; j < mean.size(); ++j) s.thetas(i, j) = mean(j) + sd(j) * rng.normal();
  return s;
}

MfviResult mfvi_train(const BnnSpec& bnn, LikelihoodModel& lik, const Dataset& train, const TrainConfig& tc) {
  tc.validate();
  const auto m = bnn.param_count();
  const RngStream root(tc.seed);
  RngStream init = root.derive("init");
  Var mean = ag::parameter(Tensor::from(bnn_initial_theta(bnn, init)));
  Var log_std = ag::parameter(Tensor(Shape{m}, std::log(tc.mfvi_initial_std)));
  reset_noise(lik, tc);
  std::vector<Var> params{mean, log_std};
  const bool train_noise = lik.kind == LikelihoodKind::Gaussian && tc.learn_noise;
  if (train_noise) params.push_back(lik.log_noise_var);
  Adam opt(params, tc.optimizer, tc.steps);
  const RngStream training = root.derive("training");
  const double warm_steps = tc.kl_warmup_fraction * static_cast<double>(tc.steps);

  MfviResult res;
  const Clock clock;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    RngStream srng = training.derive(step);
    const Batch b = select_batch(train, tc.batch_size, srng.derive("batch"));
    const auto x = ag::constant(Tensor::from(b.data.x));
    const double beta = warm_steps > 0.0 ? std::min(1.0, static_cast<double>(step + 1) / warm_steps) : 1.0;
    std::vector<Var> lls;
    const auto sd = ag::elementwise(log_std, Activation::Exp);
    for (std::size_t s = 0; s < tc.elbo_samples; ++s) {
      Tensor eps(Shape{m});
      for (std::size_t i = 0; i < m; ++i) eps[i] = srng.normal();
      auto theta = ag::add(mean, ag::mul(sd, ag::constant(std::move(eps))));
      lls.push_back(as_row(log_likelihood(lik, bnn_forward(bnn, splice(bnn, theta), x), b.data.y, b.scale)));
    }
    auto lik_term = ag::mean(ag::concat(lls));
    auto kl_term = ag::scale(kl_gaussian_diag(mean, log_std, tc.prior_scale), -beta);
    auto total = ag::add(lik_term, kl_term);
    BoundValue bv{lik_term.item(), kl_term.item(), 0.0, 0.0, total.item()};
    if (!std::isfinite(bv.total)) {
      res.status.aborted = true;
      res.status.reason = "non-finite objective at step " + std::to_string(step);
      break;
    }
    res.status.last_good_step = step;
    res.trace.rows.push_back({step, bv, lik.noise_var()});
    res.trace.wall_seconds.push_back(clock.seconds());
    opt.zero_grad();
    ag::backward(ag::scale(total, -1.0));
    opt.step();
  }
  res.posterior.mean = mean.value().vec();
  res.posterior.log_std = log_std.value().vec();
  return res;
}

MapResult map_train(const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& train, const TrainConfig& tc,
                    RngStream& rng) {
  tc.validate();
  Var theta = ag::parameter(Tensor::from(bnn_initial_theta(bnn, rng)));
  Var lnv = ag::parameter(Tensor::scalar(2.0 * std::log(tc.initial_noise_std)));
  const bool gaussian = lik.kind == LikelihoodKind::Gaussian;
  std::vector<Var> params{theta};
  if (gaussian && tc.learn_noise) params.push_back(lnv);
  Adam opt(params, tc.optimizer, tc.steps);
  const RngStream training = rng.derive("training");
  MapResult res;
  const Clock clock;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    const Batch b = select_batch(train, tc.batch_size, training.derive(step));
    auto out = bnn_forward(bnn, splice(bnn, theta), ag::constant(Tensor::from(b.data.x)));
    auto ll = gaussian ? gaussian_log_likelihood(out, b.data.y, lnv, b.scale) : log_likelihood(lik, out, b.data.y, b.scale);
    auto lp = log_prior(theta, tc.prior_scale);
    auto total = ag::add(ll, lp);
    res.trace.rows.push_back({step, BoundValue{ll.item(), lp.item(), 0.0, 0.0, total.item()},
                              gaussian ? std::exp(lnv.item()) : 0.0});
    res.trace.wall_seconds.push_back(clock.seconds());
    if (!std::isfinite(total.item())) throw DomainError("map: non-finite objective at step " + std::to_string(step));
    opt.zero_grad();
    ag::backward(ag::scale(total, -1.0));
    opt.step();
  }
  res.theta = theta.value().vec();
  res.log_noise_var = lnv.item();
  return res;
}

PosteriorSampleSet ensemble_train(std::size_t n_members, const BnnSpec& bnn, const LikelihoodModel& lik,
                                  const Dataset& train, const TrainConfig& tc, std::vector<TrainTrace>* traces) {
  if (n_members < 2) throw ContractError("ensemble: needs at least two members");
  const RngStream root = RngStream(tc.seed).derive("ensemble");
  PosteriorSampleSet s;
  s.thetas.resize(static_cast<Eigen::Index>(n_members), static_cast<Eigen::Index>(bnn.param_count()));
  Vector lnv(static_cast<Eigen::Index>(n_members));
  for (std::size_t k = 0; k < n_members; ++k) {
    RngStream rng = root.derive(k);
    const auto r = map_train(bnn, lik, train, tc, rng);
    s.thetas.row(static_cast<Eigen::Index>(k)) = r.theta.transpose();
    lnv(static_cast<Eigen::Index>(k)) = r.log_noise_var;
    if (traces) traces->push_back(r.trace);
  }
  if (lik.kind == LikelihoodKind::Gaussian) s.log_noise_var = lnv;
  return s;
}

}  // namespace livi
