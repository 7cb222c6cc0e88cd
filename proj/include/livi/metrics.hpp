#pragma once

// Evaluation metrics for regression and classification posteriors, and the
// per-run report that collects them.

#include "livi/bnn.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

namespace livi {

/// Root mean squared error, multiplied by y_scale to undo target
/// standardization.
double rmse(const Vector& predictions, const Vector& targets, double y_scale = 1.0);

/// Mean over columns of log(mean over rows of exp(log_probs)), where
/// log_probs is [samples, points].
double log_mean_exp_ll(const Matrix& log_probs);

/// [samples, points] matrix of log p(y_i | f_theta_s(x_i)). Gaussian noise
/// comes from samples.log_noise_var when present, else from lik. y_scale > 1
/// rescales a standardized Gaussian density to the original target units.
Matrix pointwise_log_likelihood(const BnnSpec& spec, const PosteriorSampleSet& samples, const LikelihoodModel& lik,
                                const Matrix& x, const Vector& y, double y_scale = 1.0);

/// Per-datum test log-likelihood of the sample-mixture predictive.
double test_ll(const BnnSpec& spec, const PosteriorSampleSet& samples, const LikelihoodModel& lik, const Matrix& x,
               const Vector& y, double y_scale = 1.0);

/// Expected calibration error over n_bins equal-width confidence bins.
double ece(const Matrix& probs, const std::vector<std::size_t>& labels, std::size_t n_bins = 15);

/// Probability that a random in-distribution score exceeds a random OOD
/// score, ties counting one half.
double auroc(const Vector& scores_in, const Vector& scores_out);

/// Per-row Shannon entropy in nats.
Vector row_entropy(const Matrix& probs);
/// row_entropy, ascending.
Vector entropy_cdf(const Matrix& probs);

/// Maximum softmax probability per row, and its mean.
Vector confidence(const Matrix& probs);
double mean_confidence(const Matrix& probs);

/// Sample Pearson correlation; ContractError below two points.
double pearson(const Vector& a, const Vector& b);

/// entropy,cdf rows for a sorted entropy list.
void write_entropy_cdf_csv(const Vector& sorted_entropy, std::ostream& out);

struct MetricsReport {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> rmse;
  std::optional<double> test_ll;
  std::optional<double> ece;
  std::optional<double> auroc;
  std::optional<double> mean_confidence;
  std::optional<double> mean_epistemic_std;
  std::optional<double> noise_var;
  Vector entropy_cdf;
  /// Method- or experiment-specific scalars (sampler diagnostics, bench
  /// summaries).
  std::map<std::string, double> extra;
  /// Free-form notes, e.g. a fallback that replaced the requested dataset.
  std::string notes;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

}  // namespace livi
