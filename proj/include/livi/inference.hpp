#pragma once

// Training loops: LIVI under the full-Jacobian or smallest-singular-value
// bound, and the mean-field VI, HMC and deep-ensemble baselines.

#include "livi/bnn.hpp"
#include "livi/entropy.hpp"
#include "livi/optim.hpp"

#include <functional>
#include <iosfwd>
#include <string>

namespace livi {

enum class BoundKind { FullJacobian, SvBound };

std::string_view to_string(BoundKind b);

struct TrainConfig {
  BoundKind bound = BoundKind::FullJacobian;
  std::size_t elbo_samples = 2;
  double sigma2 = 1e-4;
  AdamConfig optimizer;
  std::size_t steps = 5000;
  std::uint64_t seed = 0;
  /// 0 uses the full training set every step.
  std::size_t batch_size = 0;
  double prior_scale = 1.0;
  /// Train log eta^2 by type-II maximum likelihood.
  bool learn_noise = true;
  double initial_noise_std = 1.0;
  /// Generator initialization gain (LIVI) and initial posterior std (MFVI).
  double init_gain = 0.3;
  double mfvi_initial_std = 0.05;
  /// LIVI: start the generator's output bias at bnn_initial_theta so that
  /// g(z) is centred on a standard network initialization.
  bool init_output_from_network = true;
  /// MFVI: the KL weight rises linearly from 0 and reaches 1 after this
  /// fraction of the steps.
  double kl_warmup_fraction = 0.8;
  LobpcgOptions lobpcg;
  /// Call the checkpoint hook every this many steps (0: only at the end).
  std::size_t checkpoint_every = 0;

  void validate() const;
};

/// total = likelihood + prior + entropy + constant.
struct BoundValue {
  double likelihood = 0.0;
  double prior = 0.0;
  double entropy = 0.0;
  double constant = 0.0;
  double total = 0.0;
};

struct BoundEvaluation {
  BoundValue value;
  Var total;
  EntropyEstimate entropy;
  Matrix zs;
};

/// Draws elbo_samples pairs (z, eta) from rng, forms theta = g(z) + eta and
/// averages the scaled log-likelihood and log-prior over them. The entropy
/// term uses the same z draws; LOBPCG (sv-bound only) draws its start
/// vectors from a stream derived from rng, seeded by warm_start when given.
/// LOBPCG non-convergence raises EstimatorError.
BoundEvaluation livi_bound(const DlvmConfig& cfg, const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& batch,
                           double scale, const TrainConfig& tc, RngStream& rng,
                           std::vector<Vector>* warm_start = nullptr);

struct TraceRow {
  std::size_t step = 0;
  BoundValue bound;
  double noise_var = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  /// Seconds since training started, one entry per row.
  std::vector<double> wall_seconds;

  /// step,likelihood,prior,entropy,total,eta2 with 17 significant digits.
  void write_csv(std::ostream& out) const;
  /// step,wall_seconds.
  void write_timing_csv(std::ostream& out) const;
  /// Centered moving average of the total bound.
  std::vector<double> smoothed_total(std::size_t window) const;
};

struct TrainStatus {
  bool aborted = false;
  std::string reason;
  /// Last step whose parameters were kept (the restored state on abort).
  std::size_t last_good_step = 0;
};

using CheckpointFn = std::function<void(std::size_t step, const Tensor& params, double log_noise_var)>;

struct LiviResult {
  TrainTrace trace;
  TrainStatus status;
};

/// Initializes the generator from the "init" stream of tc.seed and ascends
/// the selected bound in place. A non-finite bound stops training and
/// restores the last finite state.
LiviResult livi_train(DlvmConfig& cfg, const BnnSpec& bnn, LikelihoodModel& lik, const Dataset& train,
                      const TrainConfig& tc, const CheckpointFn& checkpoint = {});

/// KL(N(mean, diag(exp(2 log_std))) || N(0, prior_scale^2 I)).
double kl_gaussian_diag(const Vector& mean, const Vector& log_std, double prior_scale = 1.0);
Var kl_gaussian_diag(const Var& mean, const Var& log_std, double prior_scale = 1.0);

struct MeanFieldPosterior {
  Vector mean;
  Vector log_std;

  PosteriorSampleSet sample(std::size_t n, RngStream& rng) const;
};

struct MfviResult {
  MeanFieldPosterior posterior;
  /// prior holds -beta * KL, entropy and constant are zero.
  TrainTrace trace;
  TrainStatus status;
};

MfviResult mfvi_train(const BnnSpec& bnn, LikelihoodModel& lik, const Dataset& train, const TrainConfig& tc);

struct MapResult {
  Vector theta;
  double log_noise_var = 0.0;
  TrainTrace trace;
};

/// Maximizes log p(D | theta) + log p(theta) from bnn_initial_theta(rng).
MapResult map_train(const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& train, const TrainConfig& tc,
                    RngStream& rng);

/// Independent MAP fits with per-member streams; each member's log eta^2 is
/// recorded for Gaussian likelihoods. Member traces go to `traces` when given.
PosteriorSampleSet ensemble_train(std::size_t n_members, const BnnSpec& bnn, const LikelihoodModel& lik,
                                  const Dataset& train, const TrainConfig& tc,
                                  std::vector<TrainTrace>* traces = nullptr);

struct HmcConfig {
  double step_size = 0.01;
  std::size_t leapfrog_steps = 20;
  std::size_t n_samples = 1000;
  std::size_t n_warmup = 500;
  double mass = 1.0;
  /// Dual-averaging step-size adaptation during warm-up.
  bool adapt_step_size = true;
  double target_accept = 0.8;
  double divergence_threshold = 1000.0;

  void validate() const;
};

/// Log density and its gradient at x.
using LogDensityFn = std::function<double(const Vector& x, Vector& grad)>;

struct LeapfrogState {
  Vector x, p;
  double log_density = 0.0;
  Vector grad;
};

LeapfrogState leapfrog(const LogDensityFn& f, LeapfrogState s, double step_size, std::size_t steps, double mass);

/// Kinetic minus log density.
double hamiltonian(const LeapfrogState& s, double mass);

struct HmcResult {
  Matrix samples;
  double acceptance_rate = 0.0;
  /// Divergent trajectories while sampling and during warm-up.
  std::size_t divergences = 0;
  std::size_t warmup_divergences = 0;
  double step_size = 0.0;
};

HmcResult hmc_sample_target(const LogDensityFn& f, Vector x0, const HmcConfig& cfg, RngStream& rng);

struct BnnHmcResult {
  PosteriorSampleSet samples;
  double acceptance_rate = 0.0;
  std::size_t divergences = 0;
  std::size_t warmup_divergences = 0;
  double step_size = 0.0;
};

/// Samples theta (N(0, prior_scale^2) prior) jointly with log eta^2 (flat
/// prior) for Gaussian likelihoods; theta only for categorical ones.
BnnHmcResult hmc_sample(const HmcConfig& cfg, const BnnSpec& bnn, const LikelihoodModel& lik, const Dataset& data,
                        double prior_scale, const Vector& theta0, double log_noise_var0, RngStream& rng);

}  // namespace livi
