#include "livi/data.hpp"

#include "livi/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace livi {

Dataset Dataset::rows(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.num_classes = num_classes;
  out.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(idx[i]);
    if (r >= x.rows()) throw DimensionError("dataset: row index out of range");
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
    out.y(static_cast<Eigen::Index>(i)) = y(r);
  }
  return out;
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y(i);
    if (v < 0 || v != std::floor(v) || (num_classes > 0 && v >= static_cast<double>(num_classes)))
      throw DomainError("dataset: target " + std::to_string(v) + " is not a valid class id");
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(v);
  }
  return out;
}

Matrix Standardization::apply_x(const Matrix& x) const {
  return (x.rowwise() - x_mean.transpose()).array().rowwise() / x_std.transpose().array();
}

Matrix Standardization::invert_x(const Matrix& x) const {
  return (x.array().rowwise() * x_std.transpose().array()).matrix().rowwise() + x_mean.transpose();
}

Vector Standardization::apply_y(const Vector& y) const { return (y.array() - y_mean) / y_std; }
Vector Standardization::invert_y(const Vector& y) const { return y.array() * y_std + y_mean; }

Dataset DatasetTable::all() const { return Dataset{x, y, num_classes}; }
Dataset DatasetTable::train() const { return all().rows(train_idx); }
Dataset DatasetTable::test() const { return all().rows(test_idx); }

DatasetTable make_table(Matrix x, Vector y, std::size_t num_classes, bool standardize, double train_fraction,
                        std::uint64_t seed) {
  if (x.rows() != y.size()) throw DimensionError("dataset: feature and target row counts differ");
  if (x.rows() == 0) throw IngestionError("dataset: no rows");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw ConfigError("dataset: train fraction must be in (0, 1]");
  DatasetTable t;
  t.x = std::move(x);
  t.y = std::move(y);
  t.num_classes = num_classes;

  const auto n = static_cast<std::size_t>(t.x.rows());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng = RngStream(seed).derive("split");
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  t.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  t.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(t.train_idx.begin(), t.train_idx.end());
  std::sort(t.test_idx.begin(), t.test_idx.end());

  const auto p = t.x.cols();
  t.stats.x_mean = Vector::Zero(p);
  t.stats.x_std = Vector::Ones(p);
  if (standardize) {
    const Dataset tr = t.train();
    const double m = static_cast<double>(tr.size());
    t.stats.x_mean = tr.x.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < p; ++j) {
      const double var = (tr.x.col(j).array() - t.stats.x_mean(j)).square().sum() / std::max(m - 1.0, 1.0);
      t.stats.x_std(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    if (num_classes == 0) {
      t.stats.y_mean = tr.y.mean();
      const double var = (tr.y.array() - t.stats.y_mean).square().sum() / std::max(m - 1.0, 1.0);
      t.stats.y_std = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    t.x = t.stats.apply_x(t.x);
    if (num_classes == 0) t.y = t.stats.apply_y(t.y);
    t.standardized = true;
  }
  return t;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw IngestionError("csv row " + std::to_string(row) + ": unterminated quote");
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

DatasetTable load_csv(const std::filesystem::path& path, const std::string& target_column, bool standardize,
                      double train_fraction, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IngestionError("csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw IngestionError("csv: " + path.string() + " is empty");
  auto header = split_csv_line(line, 1);
  for (auto& h : header) h = trim(h);
  const auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end()) throw IngestionError("csv: no column named '" + target_column + "'");
  const auto target = static_cast<std::size_t>(target_it - header.begin());

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line, row_no);
    if (cells.size() != header.size())
      throw IngestionError("csv row " + std::to_string(row_no) + ": expected " + std::to_string(header.size()) +
                           " columns, found " + std::to_string(cells.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      const char* end = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(cell.data(), end, vals[c]);
      if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(vals[c]))
        throw IngestionError("csv row " + std::to_string(row_no) + ", column " + std::to_string(c + 1) + " ('" +
                             header[c] + "'): non-numeric value '" + cell + "'");
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IngestionError("csv: " + path.string() + " has a header but no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(header.size() - 1);
  Matrix x(n, p);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index k = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == target)
        y(i) = rows[static_cast<std::size_t>(i)][c];
      else
        x(i, k++) = rows[static_cast<std::size_t>(i)][c];
    }
  }
  auto t = make_table(std::move(x), std::move(y), 0, standardize, train_fraction, seed);
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != target) t.feature_names.push_back(header[c]);
  t.target_name = target_column;
  return t;
}

double toy_mean_function(double x) { return std::sin(x); }

DatasetTable make_toy_sinusoid(const ToySinusoidConfig& cfg, std::uint64_t seed) {
  if (!(cfg.x_min < cfg.gap_lo && cfg.gap_lo < cfg.gap_hi && cfg.gap_hi < cfg.x_max))
    throw ConfigError("toy data: the gap must lie strictly inside the domain");
  if (cfg.n == 0 || cfg.noise < 0.0) throw ConfigError("toy data: need n > 0 and noise >= 0");
  RngStream rng = RngStream(seed).derive("data");
  const double left = cfg.gap_lo - cfg.x_min, right = cfg.x_max - cfg.gap_hi;
  Matrix x(static_cast<Eigen::Index>(cfg.n), 1);
  Vector y(static_cast<Eigen::Index>(cfg.n));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double u = rng.uniform() * (left + right);
    const double xi = u < left ? cfg.x_min + u : cfg.gap_hi + (u - left);
    x(i, 0) = xi;
    y(i) = toy_mean_function(xi) + cfg.noise * rng.normal();
  }
  return make_table(std::move(x), std::move(y), 0, false, 1.0, seed);
}

std::pair<DatasetTable, DatasetTable> make_synth_classify(const SynthClassifyConfig& cfg, std::uint64_t seed) {
  if (cfg.n_in == 0 || cfg.n_ood == 0 || cfg.clusters_per_class == 0)
    throw ConfigError("synthetic classification: counts must be positive");
  RngStream rng = RngStream(seed).derive("data");
  const std::size_t k = 2 * cfg.clusters_per_class;
  Matrix x(static_cast<Eigen::Index>(cfg.n_in), 2);
  Vector y(static_cast<Eigen::Index>(cfg.n_in));
  double max_r = 0.0;
  for (std::size_t i = 0; i < cfg.n_in; ++i) {
    const std::size_t label = i % 2;
    // Clusters alternate class around the circle.
    const std::size_t cluster = 2 * rng.below(cfg.clusters_per_class) + label;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(cluster) / static_cast<double>(k);
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = cfg.radius * std::cos(angle) + cfg.cluster_std * rng.normal();
    x(r, 1) = cfg.radius * std::sin(angle) + cfg.cluster_std * rng.normal();
    y(r) = static_cast<double>(label);
    max_r = std::max(max_r, x.row(r).norm());
  }
  Matrix xo(static_cast<Eigen::Index>(cfg.n_ood), 2);
  const double ring = cfg.ood_factor * max_r;
  for (Eigen::Index i = 0; i < xo.rows(); ++i) {
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    const double r = ring * (1.0 + 0.1 * rng.uniform());
    xo(i, 0) = r * std::cos(angle);
    xo(i, 1) = r * std::sin(angle);
  }
  auto in = make_table(std::move(x), std::move(y), 2, false, 0.75, seed);
  auto ood = make_table(std::move(xo), Vector::Zero(static_cast<Eigen::Index>(cfg.n_ood)), 2, false, 1.0, seed);
  return {std::move(in), std::move(ood)};
}

DatasetTable make_synth_regression(const SynthRegressionConfig& cfg, std::uint64_t seed) {
  if (cfg.n < 2 || cfg.features < 5 || cfg.noise < 0.0)
    throw ConfigError("synthetic regression: need n >= 2, at least 5 features and noise >= 0");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
    throw ConfigError("synthetic regression: train_fraction must be in (0, 1)");
  RngStream rng = RngStream(seed).derive("data");
  Matrix x(static_cast<Eigen::Index>(cfg.n), static_cast<Eigen::Index>(cfg.features));
  Vector y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.uniform();
    y(i) = 10.0 * std::sin(std::numbers::pi * x(i, 0) * x(i, 1)) + 20.0 * (x(i, 2) - 0.5) * (x(i, 2) - 0.5) +
           10.0 * x(i, 3) + 5.0 * x(i, 4) + cfg.noise * rng.normal();
  }
  return make_table(std::move(x), std::move(y), 0, true, cfg.train_fraction, seed);
}

}  // namespace livi
