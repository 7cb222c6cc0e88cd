#include "livi/metrics.hpp"

#include "livi/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <iomanip>
#include <ostream>

namespace livi {

namespace {

void check_probs(const Matrix& probs, const char* who) {
  if (probs.rows() == 0 || probs.cols() == 0) throw ContractError(std::string(who) + ": empty probability matrix");
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if ((probs.row(r).array() < 0.0).any() || std::abs(probs.row(r).sum() - 1.0) > 1e-6)
      throw ContractError(std::string(who) + ": row " + std::to_string(r) + " is not a probability vector");
  }
}

}  // namespace

double rmse(const Vector& predictions, const Vector& targets, double y_scale) {
  if (predictions.size() == 0) throw ContractError("rmse: empty input");
  if (predictions.size() != targets.size()) throw DimensionError("rmse: predictions and targets differ in length");
  return y_scale * std::sqrt((predictions - targets).squaredNorm() / static_cast<double>(predictions.size()));
}

double log_mean_exp_ll(const Matrix& log_probs) {
  if (log_probs.rows() == 0 || log_probs.cols() == 0) throw ContractError("test_ll: no samples or no points");
  const double log_s = std::log(static_cast<double>(log_probs.rows()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < log_probs.cols(); ++i) {
    const double mx = log_probs.col(i).maxCoeff();
    if (!std::isfinite(mx)) {
      total += mx;
      continue;
    }
    total += mx + std::log((log_probs.col(i).array() - mx).exp().sum()) - log_s;
  }
  return total / static_cast<double>(log_probs.cols());
}

Matrix pointwise_log_likelihood(const BnnSpec& spec, const PosteriorSampleSet& samples, const LikelihoodModel& lik,
                                const Matrix& x, const Vector& y, double y_scale) {
  if (samples.size() == 0) throw ContractError("test_ll: no posterior samples");
  if (x.rows() != y.size()) throw DimensionError("test_ll: x and y differ in row count");
  if (!(y_scale > 0.0)) throw ConfigError("test_ll: y_scale must be positive");
  const auto s = static_cast<Eigen::Index>(samples.size());
  Matrix lp(s, y.size());
  for (Eigen::Index k = 0; k < s; ++k) {
    const Matrix out = bnn_forward_values(spec, samples.thetas.row(k).transpose(), x);
    if (lik.kind == LikelihoodKind::Gaussian) {
      const double lnv = samples.log_noise_var ? (*samples.log_noise_var)(k) : std::log(lik.noise_var());
      const double c = -0.5 * (std::log(2.0 * std::numbers::pi) + lnv) - std::log(y_scale);
      lp.row(k) = (c - (y - out.col(0)).array().square() * (0.5 * std::exp(-lnv))).transpose();
    } else {
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const auto label = static_cast<Eigen::Index>(y(i));
        if (label < 0 || label >= out.cols()) throw DomainError("test_ll: label outside the class range");
        const double mx = out.row(i).maxCoeff();
        lp(k, i) = out(i, label) - mx - std::log((out.row(i).array() - mx).exp().sum());
      }
    }
  }
  return lp;
}

double test_ll(const BnnSpec& spec, const PosteriorSampleSet& samples, const LikelihoodModel& lik, const Matrix& x,
               const Vector& y, double y_scale) {
  return log_mean_exp_ll(pointwise_log_likelihood(spec, samples, lik, x, y, y_scale));
}

double ece(const Matrix& probs, const std::vector<std::size_t>& labels, std::size_t n_bins) {
  check_probs(probs, "ece");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw DimensionError("ece: probs and labels differ in length");
  if (n_bins == 0) throw ConfigError("ece: n_bins must be positive");
  std::vector<double> conf(n_bins, 0.0), acc(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index pred = 0;
    const double c = probs.row(r).maxCoeff(&pred);
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(c * static_cast<double>(n_bins)));
    conf[b] += c;
    acc[b] += static_cast<std::size_t>(pred) == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
    ++count[b];
  }
  double e = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b)
    if (count[b]) e += std::abs(acc[b] - conf[b]);
  return e / static_cast<double>(probs.rows());
}

double auroc(const Vector& scores_in, const Vector& scores_out) {
  if (scores_in.size() == 0 || scores_out.size() == 0) throw ContractError("auroc: both score sets must be nonempty");
  std::vector<double> out(scores_out.data(), scores_out.data() + scores_out.size());
  std::sort(out.begin(), out.end());
  double wins = 0.0;
  for (Eigen::Index i = 0; i < scores_in.size(); ++i) {
    const auto lo = std::lower_bound(out.begin(), out.end(), scores_in(i));
    const auto hi = std::upper_bound(lo, out.end(), scores_in(i));
    wins += static_cast<double>(lo - out.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(scores_in.size()) * static_cast<double>(scores_out.size()));
}

Vector row_entropy(const Matrix& probs) {
  check_probs(probs, "entropy");
  Vector h(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    double v = 0.0;
    for (Eigen::Index k = 0; k < probs.cols(); ++k)
      if (probs(r, k) > 0.0) v -= probs(r, k) * std::log(probs(r, k));
    h(r) = v;
  }
  return h;
}

Vector entropy_cdf(const Matrix& probs) {
  Vector h = row_entropy(probs);
  std::sort(h.data(), h.data() + h.size());
  return h;
}

Vector confidence(const Matrix& probs) {
  check_probs(probs, "confidence");
  return probs.rowwise().maxCoeff();
}

double mean_confidence(const Matrix& probs) { return confidence(probs).mean(); }

double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("pearson: inputs differ in length");
  if (a.size() < 2) throw ContractError("pearson: needs at least two points");
  const Vector da = a.array() - a.mean(), db = b.array() - b.mean();
  return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

void write_entropy_cdf_csv(const Vector& sorted_entropy, std::ostream& out) {
  out << "entropy,cdf\n" << std::setprecision(17);
  const auto n = static_cast<double>(sorted_entropy.size());
  for (Eigen::Index i = 0; i < sorted_entropy.size(); ++i)
    out << sorted_entropy(i) << ',' << static_cast<double>(i + 1) / n << '\n';
}

namespace {

void put(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

void get(const nlohmann::json& j, const char* key, std::optional<double>& v) {
  if (j.contains(key) && !j[key].is_null()) v = j[key].get<double>();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["method"] = method;
  j["seed"] = seed;
  put(j, "rmse", rmse);
  put(j, "test_ll", test_ll);
  put(j, "ece", ece);
  put(j, "auroc", auroc);
  put(j, "mean_confidence", mean_confidence);
  put(j, "mean_epistemic_std", mean_epistemic_std);
  put(j, "noise_var", noise_var);
  if (!extra.empty()) j["extra"] = extra;
  j["entropy_cdf"] = std::vector<double>(entropy_cdf.data(), entropy_cdf.data() + entropy_cdf.size());
  if (!notes.empty()) j["notes"] = notes;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.dataset = j.value("dataset", "");
    r.method = j.value("method", "");
    r.seed = j.value("seed", std::uint64_t{0});
    get(j, "rmse", r.rmse);
    get(j, "test_ll", r.test_ll);
    get(j, "ece", r.ece);
    get(j, "auroc", r.auroc);
    get(j, "mean_confidence", r.mean_confidence);
    get(j, "mean_epistemic_std", r.mean_epistemic_std);
    get(j, "noise_var", r.noise_var);
    if (j.contains("entropy_cdf")) {
      const auto v = j["entropy_cdf"].get<std::vector<double>>();
      r.entropy_cdf = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("extra"))
      for (const auto& [k, v] : j["extra"].items())
        r.extra[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    r.notes = j.value("notes", "");
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("metrics report: ") + e.what());
  }
  return r;
}

}  // namespace livi
