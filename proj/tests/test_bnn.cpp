#include "livi/bnn.hpp"
#include "livi/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace livi {
namespace {

using testing::finite_difference;
using testing::relative_error;
using testing::to_vector;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

BnnSpec toy_spec() { return BnnSpec{1, {7, 10}, 1, Activation::Elu}; }

Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Independent evaluation: explicit loops over neurons, weights indexed by
// hand from the flat vector.
Matrix straight_line_mlp(const std::vector<std::size_t>& widths, const Vector& theta, const Matrix& x) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(widths.back()));
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    std::vector<double> h(x.row(n).data(), x.row(n).data() + x.cols());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], o = widths[l + 1];
      std::vector<double> next(o);
      for (std::size_t j = 0; j < o; ++j) {
        double a = theta(static_cast<Eigen::Index>(off + in * o + j));
        for (std::size_t i = 0; i < in; ++i) a += h[i] * theta(static_cast<Eigen::Index>(off + i * o + j));
        next[j] = (l + 2 < widths.size()) ? (a > 0 ? a : std::exp(a) - 1.0) : a;
      }
      off += in * o + o;
      h = next;
    }
    for (std::size_t j = 0; j < h.size(); ++j) out(n, static_cast<Eigen::Index>(j)) = h[j];
  }
  return out;
}

TEST(Splice, ParameterCounts) {
  EXPECT_EQ(toy_spec().param_count(), 105u);
  EXPECT_EQ((BnnSpec{2, {}, 3, Activation::Identity}).param_count(), 9u);
  EXPECT_EQ(toy_spec().layer_param_counts(), (std::vector<std::size_t>{14, 80, 11}));
}

TEST(Splice, ViewsPartitionThetaAndFlattenRoundTrips) {
  const auto spec = toy_spec();
  const Vector theta = random_vector(105, 1);
  auto t = ag::parameter(Tensor::from(theta));
  const auto sp = splice(spec, t);
  std::size_t expected = 0;
  for (const auto& l : sp.layers) {
    EXPECT_EQ(l.offset, expected);
    expected += l.in * l.out + l.out;
  }
  EXPECT_EQ(expected, 105u);
  EXPECT_EQ(sp.flatten().value().vec(), theta);
  EXPECT_EQ(sp.layers[1].weight.shape(), (Shape{7, 10}));
  EXPECT_DOUBLE_EQ(sp.layers[1].weight.value()[0], theta(14));
  EXPECT_THROW(splice(spec, ag::parameter(Tensor(Shape{104}))), DimensionError);
}

TEST(Splice, GradientsReachTheta) {
  const auto spec = toy_spec();
  auto t = ag::parameter(Tensor::from(random_vector(105, 2)));
  ag::backward(ag::sum(bnn_forward(spec, splice(spec, t), ag::constant(Tensor::from(Matrix(random_matrix(5, 1, 3)))))));
  EXPECT_GT(Tensor(t.grad()).vec().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ZeroThetaGivesZeroOutputs) {
  const auto spec = toy_spec();
  const auto out = bnn_forward(spec, splice(spec, ag::constant(Tensor(Shape{105}))),
                               ag::constant(Tensor::from(Matrix(random_matrix(4, 1, 4)))));
  EXPECT_EQ(out.shape(), (Shape{4, 1}));
  EXPECT_EQ(out.value().mat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, MatchesStraightLineOracle) {
  const BnnSpec spec{3, {5, 4}, 2, Activation::Elu};
  const Vector theta = random_vector(static_cast<Eigen::Index>(spec.param_count()), 5);
  const Matrix x = random_matrix(9, 3, 6);
  const Matrix oracle = straight_line_mlp({3, 5, 4, 2}, theta, x);
  const auto graph = bnn_forward(spec, splice(spec, ag::constant(Tensor::from(theta))), ag::constant(Tensor::from(x)));
  EXPECT_LT((graph.value().mat() - oracle).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((bnn_forward_values(spec, theta, x) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(bnn_forward(spec, splice(spec, ag::constant(Tensor::from(theta))),
                           ag::constant(Tensor::from(Matrix(random_matrix(2, 2, 7))))),
               DimensionError);
}

TEST(Likelihood, GaussianPerfectFitAtUnitNoise) {
  auto lik = LikelihoodModel::gaussian();
  EXPECT_DOUBLE_EQ(lik.noise_var(), 1.0);
  const Vector y = random_vector(6, 8);
  const auto ll = log_likelihood(lik, ag::constant(Tensor::from(Matrix(y))), y);
  EXPECT_NEAR(ll.item(), -3.0 * kLog2Pi, 1e-12);
}

TEST(Likelihood, GaussianMatchesDensityOracleAndScales) {
  auto lik = LikelihoodModel::gaussian(0.7);
  const Vector y = random_vector(5, 9), f = random_vector(5, 10);
  double oracle = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i)
    oracle += -0.5 * std::log(2.0 * std::numbers::pi * 0.49) - (y(i) - f(i)) * (y(i) - f(i)) / (2.0 * 0.49);
  EXPECT_NEAR(log_likelihood(lik, ag::constant(Tensor::from(Matrix(f))), y).item(), oracle, 1e-12);
  EXPECT_NEAR(log_likelihood(lik, ag::constant(Tensor::from(Matrix(f))), y, 4.0).item(), 4.0 * oracle, 1e-11);
}

TEST(Likelihood, NoiseGradientVanishesAtMeanSquaredResidual) {
  auto lik = LikelihoodModel::gaussian();
  const Vector y = random_vector(8, 11), f = random_vector(8, 12);
  lik.set_noise_var((y - f).squaredNorm() / 8.0);
  ag::backward(log_likelihood(lik, ag::constant(Tensor::from(Matrix(f))), y));
  EXPECT_NEAR(lik.log_noise_var.grad()[0], 0.0, 1e-12);
  EXPECT_THROW(lik.set_noise_var(0.0), DomainError);
}

TEST(Likelihood, CategoricalUniformLogits) {
  const auto lik = LikelihoodModel::categorical(4);
  const Vector y = (Vector(3) << 0, 3, 2).finished();
  const auto ll = log_likelihood(lik, ag::constant(Tensor(Shape{3, 4}, 0.7)), y);
  EXPECT_NEAR(ll.item(), -3.0 * std::log(4.0), 1e-12);
  EXPECT_THROW(log_likelihood(lik, ag::constant(Tensor(Shape{3, 3})), y), DimensionError);
  EXPECT_THROW(LikelihoodModel::categorical(1), ConfigError);
}

TEST(Prior, ExamplesAndOracle) {
  EXPECT_NEAR(log_prior(ag::constant(Tensor(Shape{105}))).item(), -52.5 * kLog2Pi, 1e-12);
  EXPECT_NEAR(log_prior(ag::constant(Tensor(Shape{1}, 1.0))).item(), -0.5 * kLog2Pi - 0.5, 1e-14);
  const Vector t = random_vector(10, 13);
  double oracle = 0.0;
  for (Eigen::Index i = 0; i < 10; ++i)
    oracle += -0.5 * std::log(2.0 * std::numbers::pi * 0.25) - t(i) * t(i) / (2.0 * 0.25);
  EXPECT_NEAR(log_prior(ag::constant(Tensor::from(t)), 0.5).item(), oracle, 1e-12);
  EXPECT_THROW(log_prior(ag::constant(Tensor::from(t)), 0.0), ConfigError);
}

PosteriorSampleSet samples_from(const Matrix& thetas) {
  PosteriorSampleSet s;
  s.thetas = thetas;
  return s;
}

TEST(Predict, SingleOrIdenticalSamplesHaveNoEpistemicSpread) {
  const auto spec = toy_spec();
  const Matrix x = random_matrix(6, 1, 14);
  const Vector theta = random_vector(105, 15, 0.5);
  const auto one = predict_regression(spec, samples_from(theta.transpose()), x, 0.09);
  EXPECT_EQ(one.epistemic_std.cwiseAbs().maxCoeff(), 0.0);
  Matrix same(3, 105);
  same.rowwise() = theta.transpose();
  const auto p = predict_regression(spec, samples_from(same), x, 0.09);
  EXPECT_LT(p.epistemic_std.cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((p.total_std.array() - 0.3).abs().maxCoeff(), 1e-12);
  EXPECT_THROW(predict_regression(spec, samples_from(Matrix(0, 105)), x, 1.0), ContractError);
}

TEST(Predict, TwoSamplesHandArithmetic) {
  // Linear 1 -> 1 net: output = w x + b.
  const BnnSpec spec{1, {}, 1, Activation::Identity};
  Matrix thetas(2, 2);
  thetas << 0.0, 0.0, 0.0, 2.0;
  const auto p = predict_regression(spec, samples_from(thetas), Matrix::Constant(1, 1, 5.0), 0.5);
  EXPECT_DOUBLE_EQ(p.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(p.epistemic_std(0), 1.0);
  EXPECT_DOUBLE_EQ(p.total_std(0) * p.total_std(0), 1.5);
}

TEST(Predict, TotalVarianceIsEpistemicPlusNoiseEverywhere) {
  const auto spec = toy_spec();
  const Matrix thetas = random_matrix(20, 105, 16);
  auto s = samples_from(thetas);
  s.log_noise_var = Vector::Constant(20, std::log(0.2));
  const Matrix x = random_matrix(30, 1, 17);
  const auto p = predict_regression(spec, s, x, 99.0);
  EXPECT_NEAR(p.noise_var, 0.2, 1e-15);
  EXPECT_LT((p.total_std.array().square() - p.epistemic_std.array().square() - 0.2).abs().maxCoeff(), 1e-12);
}

TEST(Predict, ClassificationProbabilitiesSumToOne) {
  const BnnSpec spec{2, {6}, 3, Activation::Tanh};
  const auto s = samples_from(random_matrix(7, static_cast<Eigen::Index>(spec.param_count()), 18));
  const auto p = predict_classification(spec, s, random_matrix(25, 2, 19));
  EXPECT_LT((p.probs.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  for (Eigen::Index r = 0; r < 25; ++r) {
    EXPECT_GE(p.entropy(r), 0.0);
    EXPECT_LE(p.entropy(r), std::log(3.0) + 1e-12);
  }
}

// d/dgamma of log p(D | splice(g(z) + eta)) with z, eta held fixed.
TEST(EndToEnd, LikelihoodGradientReachesGeneratorParameters) {
  const auto spec = toy_spec();
  GeneratorModel gen = build_mlp(3, {12}, 105, Activation::Elu);
  RngStream init(20);
  gen.initialize(init, 1.0);
  const DlvmConfig cfg{gen, 1e-3};
  auto lik = LikelihoodModel::gaussian();
  const auto data = make_toy_sinusoid({}, 21).all();
  const auto x = ag::constant(Tensor::from(data.x));

  auto objective = [&]() {
    RngStream rng(22);
    auto draws = sample_graph(cfg, 2, rng);
    Var total;
    for (auto& d : draws) {
      auto ll = log_likelihood(lik, bnn_forward(spec, splice(spec, d.theta), x), data.y);
      total = total ? ag::add(total, ll) : ll;
    }
    return ag::scale(total, 0.5);
  };
  ag::backward(objective());
  const auto analytic = to_vector(gen.params().grad());
  const Tensor p0 = gen.params().value();
  const auto fd = finite_difference(
      [&](const std::vector<double>& v) {
        gen.set_params(Tensor(Shape{v.size()}, v));
        ag::NoGradScope guard;
        return objective().item();
      },
      to_vector(p0));
  EXPECT_LT(relative_error(analytic, fd), 1e-4);
}

}  // namespace
}  // namespace livi
