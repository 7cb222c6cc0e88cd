#pragma once

// Tabular datasets: CSV ingestion, standardization, seeded splits and the
// synthetic generators used by the experiments.

#include "livi/rng.hpp"
#include "livi/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace livi {

/// Features and targets for one split. Classification targets hold class
/// ids as doubles and num_classes > 0; regression has num_classes == 0.
struct Dataset {
  Matrix x;
  Vector y;
  std::size_t num_classes = 0;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t features() const { return static_cast<std::size_t>(x.cols()); }
  bool is_classification() const { return num_classes > 0; }
  Dataset rows(const std::vector<std::size_t>& idx) const;
  std::vector<std::size_t> labels() const;
};

struct Standardization {
  Vector x_mean, x_std;
  double y_mean = 0.0, y_std = 1.0;

  Matrix apply_x(const Matrix& x) const;
  Matrix invert_x(const Matrix& x) const;
  Vector apply_y(const Vector& y) const;
  Vector invert_y(const Vector& y) const;
};

/// Full table plus a seeded train/test split. When standardized, x and y
/// are stored on the standardized scale using training-split statistics.
struct DatasetTable {
  Matrix x;
  Vector y;
  std::size_t num_classes = 0;
  std::vector<std::size_t> train_idx, test_idx;
  Standardization stats;
  bool standardized = false;
  std::vector<std::string> feature_names;
  std::string target_name;

  Dataset train() const;
  Dataset test() const;
  Dataset all() const;
};

/// Parses a headered numeric CSV. target_column names the target; the
/// remaining columns are features. IngestionError reports row/column.
DatasetTable load_csv(const std::filesystem::path& path, const std::string& target_column, bool standardize,
                      double train_fraction, std::uint64_t seed);

/// Splits the rows of an in-memory table and optionally standardizes.
DatasetTable make_table(Matrix x, Vector y, std::size_t num_classes, bool standardize, double train_fraction,
                        std::uint64_t seed);

struct ToySinusoidConfig {
  std::size_t n = 70;
  double noise = 0.3;
  double x_min = -3.0, x_max = 3.0;
  double gap_lo = -1.0, gap_hi = 1.0;
};

/// y = sin(x) + N(0, noise^2) with x uniform on [x_min, x_max] minus the gap.
/// Every point is a training point; the table is not standardized.
DatasetTable make_toy_sinusoid(const ToySinusoidConfig& cfg, std::uint64_t seed);
double toy_mean_function(double x);

struct SynthClassifyConfig {
  std::size_t n_in = 400;
  std::size_t n_ood = 200;
  std::size_t clusters_per_class = 3;
  double radius = 2.0;
  double cluster_std = 0.35;
  double ood_factor = 3.0;
};

/// Two classes of interleaved Gaussian clusters on a circle, and an OOD ring
/// at ood_factor times the largest in-distribution radius. The OOD table
/// carries label 0 for every point.
std::pair<DatasetTable, DatasetTable> make_synth_classify(const SynthClassifyConfig& cfg, std::uint64_t seed);

struct SynthRegressionConfig {
  std::size_t n = 1030;
  std::size_t features = 8;
  double noise = 1.0;
  double train_fraction = 0.9;
};

/// Friedman's benchmark: x uniform on [0, 1]^p, y = 10 sin(pi x0 x1) +
/// 20 (x2 - 1/2)^2 + 10 x3 + 5 x4 + N(0, noise^2). Standardized and split.
DatasetTable make_synth_regression(const SynthRegressionConfig& cfg, std::uint64_t seed);

}  // namespace livi
