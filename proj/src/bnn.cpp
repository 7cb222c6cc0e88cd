#include "livi/bnn.hpp"

#include "livi/errors.hpp"

#include <cmath>
#include <numbers>

namespace livi {

std::size_t BnnSpec::param_count() const {
  std::size_t n = 0;
  for (auto c : layer_param_counts()) n += c;
  return n;
}

std::vector<std::size_t> BnnSpec::layer_param_counts() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < num_layers(); ++l) out.push_back(layer_in(l) * layer_out(l) + layer_out(l));
  return out;
}

Vector bnn_initial_theta(const BnnSpec& spec, RngStream& rng) {
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_in(l), out = spec.layer_out(l);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t k = 0; k < in * out; ++k) theta(static_cast<Eigen::Index>(off + k)) = sd * rng.normal();
    off += in * out + out;
  }
  return theta;
}

SplicedParams splice(const BnnSpec& spec, const Var& theta) {
  if (theta.shape() != Shape{spec.param_count()})
    throw DimensionError("splice: theta has shape " + theta.shape().str() + ", network needs " +
                         std::to_string(spec.param_count()));
  SplicedParams sp;
  sp.theta = theta;
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    LayerView v;
    v.offset = off;
    v.in = spec.layer_in(l);
    v.out = spec.layer_out(l);
    v.weight = ag::slice(theta, off, Shape{v.in, v.out});
    v.bias = ag::slice(theta, off + v.in * v.out, Shape{v.out});
    off += v.in * v.out + v.out;
    sp.layers.push_back(std::move(v));
  }
  return sp;
}

Var SplicedParams::flatten() const {
  std::vector<Var> parts;
  for (const auto& l : layers) {
    parts.push_back(l.weight);
    parts.push_back(l.bias);
  }
  return ag::concat(parts);
}

Var bnn_forward(const BnnSpec& spec, const SplicedParams& params, const Var& x) {
  if (x.shape().rank() != 2 || x.shape()[1] != spec.input_dim)
    throw DimensionError("bnn_forward: inputs have shape " + x.shape().str() + ", expected [n," +
                         std::to_string(spec.input_dim) + "]");
  Var h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& v = params.layers[l];
    h = ag::add_row(ag::matmul(h, v.weight), v.bias);
    if (l + 1 < params.layers.size() && spec.activation != Activation::Identity) h = ag::elementwise(h, spec.activation);
  }
  return h;
}

namespace {

double activate(double a, Activation act) {
  switch (act) {
    case Activation::Identity: return a;
    case Activation::Elu: return a > 0 ? a : std::expm1(a);
    case Activation::Tanh: return std::tanh(a);
    case Activation::Relu: return a > 0 ? a : 0.0;
    case Activation::Exp: return std::exp(a);
    case Activation::Log: return std::log(a);
    case Activation::Square: return a * a;
  }
  return a;
}

}  // namespace

Matrix bnn_forward_values(const BnnSpec& spec, const Vector& theta, const Matrix& x) {
  if (static_cast<std::size_t>(theta.size()) != spec.param_count())
    throw DimensionError("bnn_forward_values: theta has length " + std::to_string(theta.size()));
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim)
    throw DimensionError("bnn_forward_values: inputs have " + std::to_string(x.cols()) + " features");
  Matrix h = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(spec.layer_in(l)), out = static_cast<Eigen::Index>(spec.layer_out(l));
    Eigen::Map<const Matrix> w(theta.data() + off, in, out);
    Eigen::Map<const Vector> b(theta.data() + off + static_cast<std::size_t>(in * out), out);
    off += static_cast<std::size_t>(in * out + out);
    Matrix next = (h * w).rowwise() + b.transpose();
    if (l + 1 < spec.num_layers()) next = next.unaryExpr([&](double a) { return activate(a, spec.activation); });
    h = std::move(next);
  }
  return h;
}

LikelihoodModel LikelihoodModel::gaussian(double initial_noise_std) {
  if (!(initial_noise_std > 0.0)) throw ConfigError("likelihood: initial noise std must be positive");
  LikelihoodModel l;
  l.kind = LikelihoodKind::Gaussian;
  l.log_noise_var = ag::parameter(Tensor::scalar(2.0 * std::log(initial_noise_std)));
  return l;
}

LikelihoodModel LikelihoodModel::categorical(std::size_t k) {
  if (k < 2) throw ConfigError("likelihood: categorical needs at least two classes");
  LikelihoodModel l;
  l.kind = LikelihoodKind::Categorical;
  l.num_classes = k;
  return l;
}

double LikelihoodModel::noise_var() const {
  return kind == LikelihoodKind::Gaussian ? std::exp(log_noise_var.item()) : 0.0;
}

void LikelihoodModel::set_noise_var(double v) {
  if (kind != LikelihoodKind::Gaussian) throw ContractError("likelihood: only Gaussian models carry a noise variance");
  if (!(v > 0.0)) throw DomainError("likelihood: noise variance must be positive");
  log_noise_var.mutable_value()[0] = std::log(v);
}

Var gaussian_log_likelihood(const Var& outputs, const Vector& targets, const Var& log_noise_var, double scale) {
  const auto n = static_cast<std::size_t>(targets.size());
  if (outputs.size() != n) throw DimensionError("log_likelihood: outputs and targets differ in length");
  auto r = ag::sub(ag::reshape(outputs, Shape{n}), ag::constant(Tensor::from(targets)));
  auto sq = ag::sum(ag::mul(r, r));
  const double nd = static_cast<double>(n);
  // -n/2 log 2pi - n/2 log eta^2 - |r|^2 / (2 eta^2)
  auto inv_var = ag::elementwise(ag::scale(log_noise_var, -1.0), Activation::Exp);
  auto ll = ag::add_scalar(ag::scale(log_noise_var, -0.5 * nd) + ag::scale(ag::mul(sq, inv_var), -0.5),
                           -0.5 * nd * std::log(2.0 * std::numbers::pi));
  return scale == 1.0 ? ll : ag::scale(ll, scale);
}

Var log_likelihood(const LikelihoodModel& lik, const Var& outputs, const Vector& targets, double scale) {
  if (lik.kind == LikelihoodKind::Gaussian) return gaussian_log_likelihood(outputs, targets, lik.log_noise_var, scale);
  if (outputs.shape().rank() != 2 || outputs.shape()[1] != lik.num_classes ||
      outputs.shape()[0] != static_cast<std::size_t>(targets.size()))
    throw DimensionError("log_likelihood: logits have shape " + outputs.shape().str());
  Dataset tmp;
  tmp.y = targets;
  tmp.num_classes = lik.num_classes;
  auto ll = ag::sum(ag::gather_rows(ag::log_softmax_rows(outputs), tmp.labels()));
  return scale == 1.0 ? ll : ag::scale(ll, scale);
}

Var log_prior(const Var& theta, double prior_scale) {
  if (!(prior_scale > 0.0)) throw ConfigError("log_prior: prior scale must be positive");
  const double m = static_cast<double>(theta.size());
  const double s2 = prior_scale * prior_scale;
  return ag::add_scalar(ag::scale(ag::dot(theta, theta), -0.5 / s2), -0.5 * m * std::log(2.0 * std::numbers::pi * s2));
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

RegressionPrediction predict_regression(const BnnSpec& spec, const PosteriorSampleSet& samples, const Matrix& x,
                                        double noise_var) {
  if (samples.size() == 0) throw ContractError("predict: no posterior samples");
  const auto s = static_cast<Eigen::Index>(samples.size());
  RegressionPrediction p;
  p.sample_means.resize(s, x.rows());
  for (Eigen::Index i = 0; i < s; ++i)
    p.sample_means.row(i) = bnn_forward_values(spec, samples.thetas.row(i).transpose(), x).col(0).transpose();
  p.mean = p.sample_means.colwise().mean().transpose();
  p.epistemic_std =
      ((p.sample_means.rowwise() - p.mean.transpose()).array().square().colwise().sum() / static_cast<double>(s))
          .sqrt()
          .transpose();
  p.noise_var = samples.log_noise_var ? samples.log_noise_var->array().exp().mean() : noise_var;
  p.total_std = (p.epistemic_std.array().square() + p.noise_var).sqrt();
  return p;
}

ClassificationPrediction predict_classification(const BnnSpec& spec, const PosteriorSampleSet& samples,
                                                const Matrix& x) {
  if (samples.size() == 0) throw ContractError("predict: no posterior samples");
  ClassificationPrediction p;
  p.probs = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(spec.output_dim));
  for (std::size_t i = 0; i < samples.size(); ++i)
    p.probs += softmax_rows(bnn_forward_values(spec, samples.thetas.row(static_cast<Eigen::Index>(i)).transpose(), x));
  p.probs /= static_cast<double>(samples.size());
  p.entropy.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.probs.cols(); ++k)
      if (p.probs(r, k) > 0.0) h -= p.probs(r, k) * std::log(p.probs(r, k));
    p.entropy(r) = h;
  }
  return p;
}

}  // namespace livi
