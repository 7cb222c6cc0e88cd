#pragma once

// Feed-forward Bayesian neural networks whose weights are read from a flat
// parameter vector theta, with Gaussian and categorical likelihoods.

#include "livi/data.hpp"
#include "livi/dlvm.hpp"
#include "livi/graph.hpp"

#include <vector>

namespace livi {

/// Fully connected network input -> hidden... -> output. Hidden layers use
/// `activation`, the output layer is linear. Layer l stores its weights as an
/// in x out row-major block followed by out biases.
struct BnnSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  Activation activation = Activation::Elu;

  std::size_t num_layers() const { return hidden.size() + 1; }
  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden[l - 1]; }
  std::size_t layer_out(std::size_t l) const { return l == hidden.size() ? output_dim : hidden[l]; }
  std::size_t param_count() const;
  /// Parameter count of each layer, in order (the generator head partition).
  std::vector<std::size_t> layer_param_counts() const;
};

struct LayerView {
  std::size_t offset = 0;
  std::size_t in = 0, out = 0;
  Var weight;  // [in, out]
  Var bias;    // [out]
};

struct SplicedParams {
  Var theta;
  std::vector<LayerView> layers;

  /// Concatenation of every view in layer order.
  Var flatten() const;
};

/// Independent draws W ~ N(0, 1/fan_in), zero biases.
Vector bnn_initial_theta(const BnnSpec& spec, RngStream& rng);

SplicedParams splice(const BnnSpec& spec, const Var& theta);

/// x [n, input_dim] -> [n, output_dim].
Var bnn_forward(const BnnSpec& spec, const SplicedParams& params, const Var& x);

/// Plain evaluation of the same network for a theta vector.
Matrix bnn_forward_values(const BnnSpec& spec, const Vector& theta, const Matrix& x);

enum class LikelihoodKind { Gaussian, Categorical };

struct LikelihoodModel {
  LikelihoodKind kind = LikelihoodKind::Gaussian;
  /// Trainable scalar log eta^2 (Gaussian only).
  Var log_noise_var;
  std::size_t num_classes = 0;

  static LikelihoodModel gaussian(double initial_noise_std = 1.0);
  static LikelihoodModel categorical(std::size_t k);

  double noise_var() const;
  void set_noise_var(double v);
};

/// Sum over rows of log p(y | f(x)), multiplied by `scale` (N / batch size
/// for minibatches). outputs is [n, 1] for Gaussian, [n, K] logits otherwise.
Var log_likelihood(const LikelihoodModel& lik, const Var& outputs, const Vector& targets, double scale = 1.0);

/// Same quantity with an explicit log eta^2 graph value.
Var gaussian_log_likelihood(const Var& outputs, const Vector& targets, const Var& log_noise_var, double scale = 1.0);

/// Sum of log N(theta_i | 0, prior_scale^2).
Var log_prior(const Var& theta, double prior_scale = 1.0);

struct RegressionPrediction {
  Vector mean;
  Vector epistemic_std;
  Vector total_std;
  /// Row s holds the network output of sample s at every input.
  Matrix sample_means;
  double noise_var = 0.0;
};

struct ClassificationPrediction {
  Matrix probs;  // [n, K], averaged over samples
  Vector entropy;
};

/// Epistemic std is the population std of the per-sample outputs; the noise
/// variance is the mean of exp(log_noise_var) over samples when present,
/// `noise_var` otherwise.
RegressionPrediction predict_regression(const BnnSpec& spec, const PosteriorSampleSet& samples, const Matrix& x,
                                        double noise_var);
ClassificationPrediction predict_classification(const BnnSpec& spec, const PosteriorSampleSet& samples,
                                                const Matrix& x);

/// Row-wise softmax of a logit matrix.
Matrix softmax_rows(const Matrix& logits);

}  // namespace livi
