#include "livi/errors.hpp"
#include "livi/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace livi;

namespace {

Matrix random_probs(std::size_t n, std::size_t k, std::mt19937_64& gen) {
  std::gamma_distribution<double> g(0.5, 1.0);
  Matrix p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = g(gen) + 1e-12;
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// Bin membership written as explicit half-open intervals, last bin closed.
double ece_oracle(const Matrix& probs, const std::vector<std::size_t>& labels, std::size_t bins) {
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
    double conf = 0.0, acc = 0.0;
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      double best = -1.0;
      std::size_t arg = 0;
      for (Eigen::Index c = 0; c < probs.cols(); ++c)
        if (probs(r, c) > best) best = probs(r, c), arg = static_cast<std::size_t>(c);
      const bool in = best >= lo && (best < hi || (b + 1 == bins && best <= hi));
      if (!in) continue;
      ++n;
      conf += best;
      acc += arg == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
    }
    if (n) e += (static_cast<double>(n) / probs.rows()) * std::abs(acc / n - conf / n);
  }
  return e;
}

double auroc_oracle(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (double x : a)
    for (double y : b) s += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return s / (a.size() * b.size());
}

}  // namespace

TEST(Rmse, ExamplesAndOracle) {
  Vector t(3);
  t << 1.0, -2.0, 0.5;
  EXPECT_EQ(rmse(t, t), 0.0);
  EXPECT_NEAR(rmse(t.array() + 1.0, t), 1.0, 1e-15);
  EXPECT_NEAR(rmse(t.array() + 1.0, t, 4.2), 4.2, 1e-14);
  EXPECT_THROW(rmse(Vector(), Vector()), ContractError);
  EXPECT_THROW(rmse(t, Vector(2)), DimensionError);

  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  Vector a(200), b(200);
  for (int i = 0; i < 200; ++i) a(i) = nd(gen), b(i) = nd(gen);
  double ss = 0.0;
  for (int i = 0; i < 200; ++i) ss += (a(i) - b(i)) * (a(i) - b(i));
  EXPECT_NEAR(rmse(a, b), std::sqrt(ss / 200), 1e-12);
}

TEST(TestLl, SingleSampleZeroResidual) {
  BnnSpec spec{1, {}, 1, Activation::Identity};
  PosteriorSampleSet s;
  s.thetas = Matrix::Zero(1, 2);  // f(x) = 0
  auto lik = LikelihoodModel::gaussian(1.0);
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  EXPECT_NEAR(test_ll(spec, s, lik, x, Vector::Zero(4)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);

  Matrix dup(5, 2);
  dup.setConstant(0.3);
  PosteriorSampleSet one;
  one.thetas = dup.topRows(1);
  PosteriorSampleSet many;
  many.thetas = dup;
  Vector y(4);
  y << 0.1, -0.7, 2.0, 1.3;
  EXPECT_NEAR(test_ll(spec, many, lik, x, y), test_ll(spec, one, lik, x, y), 1e-14);
}

TEST(TestLl, TwoSampleHandComputedAndNoiseSource) {
  BnnSpec spec{1, {}, 1, Activation::Identity};
  PosteriorSampleSet s;
  s.thetas.resize(2, 2);
  s.thetas << 1.0, 0.0,  // f = x
      0.0, 0.5;          // f = 0.5
  s.log_noise_var = Vector(2);
  *s.log_noise_var << std::log(0.25), std::log(1.0);
  auto lik = LikelihoodModel::gaussian(10.0);  // ignored when samples carry noise
  Matrix x(2, 1);
  x << 0.0, 1.0;
  Vector y(2);
  y << 0.2, 0.9;
  auto logn = [](double y, double m, double v) {
    return -0.5 * std::log(2.0 * std::numbers::pi * v) - (y - m) * (y - m) / (2.0 * v);
  };
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double a = logn(y(i), x(i, 0), 0.25), b = logn(y(i), 0.5, 1.0);
    expect += std::log(0.5 * (std::exp(a) + std::exp(b)));
  }
  EXPECT_NEAR(test_ll(spec, s, lik, x, y), expect / 2.0, 1e-12);
  EXPECT_NEAR(test_ll(spec, s, lik, x, y, 3.0), expect / 2.0 - std::log(3.0), 1e-12);

  s.log_noise_var.reset();
  lik.set_noise_var(0.25);
  double e2 = 0.0;
  for (int i = 0; i < 2; ++i) e2 += std::log(0.5 * (std::exp(logn(y(i), x(i, 0), 0.25)) + std::exp(logn(y(i), 0.5, 0.25))));
  EXPECT_NEAR(test_ll(spec, s, lik, x, y), e2 / 2.0, 1e-12);
}

TEST(TestLl, RandomizedOracleAndJensenBound) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix lp(7, 13);
    for (Eigen::Index i = 0; i < lp.size(); ++i) lp(i) = 5.0 * nd(gen) - 3.0;
    double expect = 0.0;
    for (Eigen::Index c = 0; c < lp.cols(); ++c) {
      long double acc = 0.0;
      for (Eigen::Index r = 0; r < lp.rows(); ++r) acc += std::exp(static_cast<long double>(lp(r, c)));
      expect += static_cast<double>(std::log(acc / lp.rows()));
    }
    EXPECT_NEAR(log_mean_exp_ll(lp), expect / lp.cols(), 1e-12);
    EXPECT_LE(log_mean_exp_ll(lp), lp.colwise().maxCoeff().mean() + 1e-15);
  }
}

TEST(TestLl, CategoricalUsesSoftmaxOfLogits) {
  BnnSpec spec{2, {}, 3, Activation::Identity};
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  PosteriorSampleSet s;
  s.thetas.resize(3, static_cast<Eigen::Index>(spec.param_count()));
  for (Eigen::Index i = 0; i < s.thetas.size(); ++i) s.thetas(i) = nd(gen);
  Matrix x(5, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = nd(gen);
  Vector y(5);
  y << 0, 1, 2, 1, 0;
  double expect = 0.0;
  for (int i = 0; i < 5; ++i) {
    double p = 0.0;
    for (int k = 0; k < 3; ++k) p += softmax_rows(bnn_forward_values(spec, s.thetas.row(k).transpose(), x))(i, static_cast<int>(y(i)));
    expect += std::log(p / 3.0);
  }
  EXPECT_NEAR(test_ll(spec, s, LikelihoodModel::categorical(3), x, y), expect / 5.0, 1e-12);
}

TEST(Ece, CalibrationIdentities) {
  // Ten rows at confidence 0.9 with nine correct.
  Matrix p(10, 2);
  std::vector<std::size_t> labels(10, 0);
  for (int i = 0; i < 10; ++i) p.row(i) << 0.9, 0.1;
  labels[3] = 1;
  EXPECT_NEAR(ece(p, labels), 0.0, 1e-15);

  Matrix one(4, 2);
  one << 1, 0, 1, 0, 0, 1, 0, 1;
  EXPECT_NEAR(ece(one, {0, 0, 1, 1}), 0.0, 1e-15);
  EXPECT_NEAR(ece(one, {0, 1, 1, 0}), 0.5, 1e-15);
}

TEST(Ece, RandomizedOracle) {
  std::mt19937_64 gen(5);
  for (std::size_t bins : {1u, 10u, 15u, 20u}) {
    const Matrix p = random_probs(300, 4, gen);
    std::vector<std::size_t> labels(300);
    for (auto& l : labels) l = gen() % 4;
    const double e = ece(p, labels, bins);
    EXPECT_NEAR(e, ece_oracle(p, labels, bins), 1e-12);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
  EXPECT_THROW(ece(Matrix::Constant(2, 2, 0.7), {0, 1}), ContractError);
}

TEST(Auroc, ExamplesOracleAndMonotoneInvariance) {
  Vector a(3), b(3);
  a << 3, 4, 5;
  b << 0, 1, 2;
  EXPECT_EQ(auroc(a, b), 1.0);
  EXPECT_EQ(auroc(b, a), 0.0);
  EXPECT_EQ(auroc(a, a), 0.5);
  EXPECT_THROW(auroc(Vector(), a), ContractError);

  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Vector in(50 + trial), out(37);
    // Rounding produces ties.
    for (Eigen::Index i = 0; i < in.size(); ++i) in(i) = std::round(4.0 * (nd(gen) + 0.5)) / 4.0;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = std::round(4.0 * nd(gen)) / 4.0;
    const double v = auroc(in, out);
    EXPECT_NEAR(v, auroc_oracle(in, out), 1e-12);
    const auto t = [](double s) { return 3.0 * std::exp(s) + 1.0; };
    const Vector tin = in.unaryExpr(t), tout = out.unaryExpr(t);
    EXPECT_NEAR(auroc(tin, tout), v, 1e-12);
  }
}

TEST(EntropyCdf, UniformOneHotAndOracle) {
  const Matrix uniform = Matrix::Constant(6, 10, 0.1);
  const Vector h = entropy_cdf(uniform);
  for (double v : h) EXPECT_NEAR(v, std::log(10.0), 1e-12);
  EXPECT_NEAR(h(0), 2.30, 5e-3);
  EXPECT_EQ(entropy_cdf(Matrix::Identity(4, 4)), Vector::Zero(4));

  std::mt19937_64 gen(13);
  const Matrix p = random_probs(100, 5, gen);
  std::vector<double> direct;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < p.cols(); ++k) s += -p(r, k) * std::log(p(r, k));
    direct.push_back(s);
  }
  std::sort(direct.begin(), direct.end());
  const Vector got = entropy_cdf(p);
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(got(static_cast<Eigen::Index>(i)), direct[i], 1e-12);
  EXPECT_GE(got.minCoeff(), 0.0);
  EXPECT_LE(got.maxCoeff(), std::log(5.0) + 1e-12);
  EXPECT_TRUE(std::is_sorted(got.data(), got.data() + got.size()));

  // Duplicating every row keeps the empirical CDF: the k-th of n equals the
  // 2k-th of 2n.
  Matrix twice(200, 5);
  twice << p, p;
  const Vector g2 = entropy_cdf(twice);
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_EQ(g2(2 * i + 1), got(i));
}

TEST(Confidence, MeanMaxProbabilityBounds) {
  std::mt19937_64 gen(17);
  const Matrix p = random_probs(50, 4, gen);
  const double c = mean_confidence(p);
  EXPECT_GE(c, 0.25);
  EXPECT_LE(c, 1.0);
  EXPECT_NEAR(c, p.rowwise().maxCoeff().mean(), 1e-15);
}

TEST(Report, JsonRoundTripAndCdfCsv) {
  MetricsReport r;
  r.dataset = "toy";
  r.method = "livi-l1";
  r.seed = 4;
  r.rmse = 0.1 + 0.2;
  r.test_ll = -1.0 / 3.0;
  r.entropy_cdf = Vector::LinSpaced(3, 0.0, 1.0);
  r.extra["acceptance_rate"] = 0.8125;
  const auto back = MetricsReport::from_json(r.to_json());
  EXPECT_EQ(back.dataset, "toy");
  EXPECT_EQ(back.seed, 4u);
  EXPECT_EQ(*back.rmse, *r.rmse);
  EXPECT_EQ(*back.test_ll, *r.test_ll);
  EXPECT_FALSE(back.ece.has_value());
  EXPECT_EQ(back.entropy_cdf, r.entropy_cdf);
  EXPECT_EQ(back.extra, r.extra);
  r.extra["undefined"] = std::nan("");
  EXPECT_TRUE(std::isnan(MetricsReport::from_json(r.to_json()).extra.at("undefined")));
  EXPECT_THROW(MetricsReport::from_json("{"), IngestionError);

  std::ostringstream os;
  write_entropy_cdf_csv(r.entropy_cdf, os);
  EXPECT_EQ(os.str(), "entropy,cdf\n0,0.33333333333333331\n0.5,0.66666666666666663\n1,1\n");
}

TEST(Pearson, MatchesDirectFormula) {
  Vector a(4), b(4);
  a << 1, 2, 3, 5;
  b << 2, 1, 4, 7;
  const double ma = 2.75, mb = 3.5;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 4; ++i) sab += (a(i) - ma) * (b(i) - mb), saa += (a(i) - ma) * (a(i) - ma), sbb += (b(i) - mb) * (b(i) - mb);
  EXPECT_NEAR(pearson(a, b), sab / std::sqrt(saa * sbb), 1e-14);
  EXPECT_NEAR(pearson(a, 2.0 * a), 1.0, 1e-14);
  EXPECT_THROW(pearson(Vector(1), Vector(1)), ContractError);
}
