#pragma once

// Run configuration, experiment orchestration and artifact persistence for
// the command-line tool.

#include "livi/data.hpp"
#include "livi/inference.hpp"
#include "livi/metrics.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace livi {

enum class Experiment { Toy, UciRegression, SynthClassify, EntropyBench, EigenBench };
enum class Method { LiviL1, LiviL2, Mfvi, Hmc, Ensemble };

std::string_view to_string(Experiment e);
std::string_view to_string(Method m);
/// ConfigError on unknown names.
Experiment experiment_from_string(std::string_view s);
Method method_from_string(std::string_view s);

struct GeneratorSpec {
  /// "mlp" or "cmmnn".
  std::string architecture = "mlp";
  std::size_t latent_dim = 80;
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::Elu;
  /// cmmnn only.
  std::size_t noise_rows = 8, noise_cols = 8, trunk_rows = 16, trunk_cols = 16;
};

/// Generator emitting `output_dim` values, with the head partition taken
/// from the network layers for cmmnn.
GeneratorModel build_generator(const GeneratorSpec& spec, const BnnSpec& bnn);

struct DataSpec {
  /// uci-regression: "csv" reads `path`; "synthetic" uses make_synth_regression.
  std::string source = "csv";
  std::string path;
  std::string target_column;
  double train_fraction = 0.9;
  bool standardize = true;
  ToySinusoidConfig toy;
  SynthClassifyConfig classify;
  SynthRegressionConfig regression;
};

struct EvalConfig {
  std::size_t posterior_samples = 200;
  std::size_t ece_bins = 15;
  /// Grid points for the toy predictive CSV.
  std::size_t grid_points = 200;
  /// Held-out toy points drawn from a separate stream.
  std::size_t toy_test_points = 200;
};

struct BenchConfig {
  /// entropy-bench: generator d -> hidden -> m (empty hidden is linear),
  /// trained with LIVI on the toy problem; estimators logged every `every`
  /// steps.
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden;
  std::size_t every = 100;
  std::size_t n_z = 16;
  std::size_t n_is = 256;
  /// eigenbench: random tanh generators with m <= max_output, d <= max_latent.
  std::size_t trials = 50;
  std::size_t max_output = 200;
  std::size_t max_latent = 50;
  double lobpcg_tol = 1e-6;
  std::size_t lobpcg_max_iter = 1000;
};

struct RunConfig {
  Experiment experiment = Experiment::Toy;
  Method method = Method::LiviL1;
  DataSpec data;
  /// Input and output widths are set from the data.
  BnnSpec bnn{1, {7, 10}, 1, Activation::Elu};
  GeneratorSpec generator;
  TrainConfig train;
  HmcConfig hmc;
  std::size_t ensemble_members = 5;
  EvalConfig eval;
  BenchConfig bench;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;

  void validate() const;
  /// Every field, defaults included.
  std::string to_json() const;
  /// Missing keys keep the toy_defaults() values; unknown keys raise
  /// ConfigError.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

/// Defaults for the toy experiment: 105-parameter network and the tuned
/// LIVI settings.
RunConfig toy_defaults();

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport report;
  std::filesystem::path dir;
};

struct RunSummary {
  std::vector<SeedOutcome> seeds;
  int exit_code = 0;
};

/// Runs every seed into output_dir/seed_<n>. Refuses existing seed
/// directories unless `force`. Module errors are caught per seed, logged as
/// one JSON line to `log` and written to the seed's error.json.
RunSummary run(const RunConfig& cfg, bool force, std::ostream& log);

/// Rebuilds the posterior of a finished seed directory from its config
/// snapshot and checkpoint and recomputes the report.
MetricsReport evaluate_run_dir(const std::filesystem::path& seed_dir);

/// Flat little-endian float64 array plus a JSON sidecar at path + ".json".
void write_checkpoint(const std::filesystem::path& path, std::span<const double> values, const std::string& sidecar);
std::vector<double> read_checkpoint(const std::filesystem::path& path);

/// mean and population std of a metric across reports that carry it.
struct MetricSpread {
  std::size_t n = 0;
  double mean = 0.0, std = 0.0;
};
std::map<std::string, MetricSpread> summarize(const std::vector<MetricsReport>& reports);

/// One CSV row per (dataset, method) with mean and std of every metric.
void write_comparison(const std::vector<MetricsReport>& reports, std::ostream& out);

}  // namespace livi
