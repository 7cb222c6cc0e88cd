#include "livi/errors.hpp"
#include "livi/graph.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace livi {
namespace {

using testing::finite_difference;
using testing::relative_error;
using testing::to_vector;

Tensor random_tensor(RngStream& rng, Shape s) {
  Tensor t(std::move(s));
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

TEST(Matmul, IdentityTimesMatrix) {
  auto I = ag::constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto M = ag::constant(Tensor::matrix(2, 2, {1.5, -2, 3, 4}));
  auto out = ag::matmul(I, M);
  EXPECT_EQ(to_vector(out.value()), to_vector(M.value()));
}

TEST(Matmul, HandArithmetic) {
  auto a = ag::constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto b = ag::constant(Tensor::matrix(2, 1, {1, 1}));
  auto out = ag::matmul(a, b);
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out.value()[0], 3.0);
  EXPECT_DOUBLE_EQ(out.value()[1], 7.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  auto a = ag::constant(Tensor(Shape{2, 3}));
  auto b = ag::constant(Tensor(Shape{2, 2}));
  EXPECT_THROW(ag::matmul(a, b), DimensionError);
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  RngStream rng(11);
  const Tensor A0 = random_tensor(rng, Shape{5, 3});
  const Tensor B0 = random_tensor(rng, Shape{3, 2});
  const Tensor W = random_tensor(rng, Shape{5, 2});
  auto loss = [&](const Tensor& A, const Tensor& B) {
    return ag::sum(ag::matmul(ag::constant(A), ag::constant(B)) * ag::constant(W)).item();
  };

  auto a = ag::parameter(A0);
  auto b = ag::parameter(B0);
  ag::backward(ag::sum(ag::matmul(a, b) * ag::constant(W)));

  auto fa = finite_difference([&](const std::vector<double>& x) { return loss(Tensor(Shape{5, 3}, x), B0); },
                              to_vector(A0));
  auto fb = finite_difference([&](const std::vector<double>& x) { return loss(A0, Tensor(Shape{3, 2}, x)); },
                              to_vector(B0));
  EXPECT_LT(relative_error(to_vector(a.grad()), fa), 1e-6);
  EXPECT_LT(relative_error(to_vector(b.grad()), fb), 1e-6);
}

TEST(Elementwise, EluAtZeroIsContinuous) {
  auto x = ag::parameter(Tensor::vector({0.0}));
  auto y = ag::elementwise(x, Activation::Elu);
  EXPECT_DOUBLE_EQ(y.item(), 0.0);
  ag::backward(ag::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  // Left-limit derivative exp(0-) -> 1.
  auto xl = ag::parameter(Tensor::vector({-1e-12}));
  ag::backward(ag::sum(ag::elementwise(xl, Activation::Elu)));
  EXPECT_NEAR(xl.grad()[0], 1.0, 1e-11);
}

TEST(Elementwise, IdentityHasUnitGradient) {
  auto x = ag::parameter(Tensor::vector({-2.0, 0.5, 7.0}));
  auto y = ag::elementwise(x, Activation::Identity);
  EXPECT_EQ(to_vector(y.value()), to_vector(x.value()));
  ag::backward(ag::sum(y));
  for (double g : x.grad().data()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Elementwise, TanhGradientIsAnalytic) {
  RngStream rng(3);
  auto x = ag::parameter(random_tensor(rng, Shape{20}));
  ag::backward(ag::sum(ag::elementwise(x, Activation::Tanh)));
  for (std::size_t i = 0; i < 20; ++i) {
    const double t = std::tanh(x.value()[i]);
    EXPECT_NEAR(x.grad()[i], 1.0 - t * t, 1e-12);
  }
}

TEST(Elementwise, LogOfNonPositiveThrows) {
  auto x = ag::constant(Tensor::vector({1.0, 0.0}));
  EXPECT_THROW(ag::elementwise(x, Activation::Log), DomainError);
}

TEST(Elementwise, ActivationDerivativeIsDifferentiable) {
  RngStream rng(5);
  const Tensor x0 = random_tensor(rng, Shape{12});
  for (Activation fn : {Activation::Elu, Activation::Tanh, Activation::Exp, Activation::Square}) {
    auto x = ag::parameter(x0);
    ag::backward(ag::sum(ag::activation_derivative(x, fn)));
    auto fd = finite_difference(
        [&](const std::vector<double>& v) {
          return ag::sum(ag::activation_derivative(ag::constant(Tensor(Shape{12}, v)), fn)).item();
        },
        to_vector(x0));
    EXPECT_LT(relative_error(to_vector(x.grad()), fd), 1e-6) << to_string(fn);
  }
}

TEST(Reduce, SumMeanAndGradient) {
  auto x = ag::parameter(Tensor::vector({1, 2, 3}));
  EXPECT_DOUBLE_EQ(ag::sum(x).item(), 6.0);
  EXPECT_DOUBLE_EQ(ag::mean(ag::constant(Tensor(Shape{4}, 2.5))).item(), 2.5);
  ag::backward(ag::mean(x));
  for (double g : x.grad().data()) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
}

TEST(Reduce, AxisReductionAndInvalidAxis) {
  auto m = ag::parameter(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto cols = ag::reduce(m, ag::Reduce::Sum, 0);
  EXPECT_EQ(to_vector(cols.value()), (std::vector<double>{5, 7, 9}));
  auto rows = ag::reduce(m, ag::Reduce::Mean, 1);
  EXPECT_EQ(to_vector(rows.value()), (std::vector<double>{2, 5}));
  ag::backward(ag::sum(rows));
  for (double g : m.grad().data()) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
  EXPECT_THROW(ag::reduce(m, ag::Reduce::Sum, 2), DimensionError);
}

TEST(Backward, SquareAndLogExp) {
  auto x = ag::parameter(Tensor::scalar(3.0));
  ag::backward(ag::elementwise(x, Activation::Square));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);

  auto y = ag::parameter(Tensor::vector({-1.3, 0.0, 2.4}));
  ag::backward(ag::sum(ag::elementwise(ag::elementwise(y, Activation::Exp), Activation::Log)));
  for (double g : y.grad().data()) EXPECT_NEAR(g, 1.0, 1e-12);
}

TEST(Backward, NonScalarRootThrows) {
  auto x = ag::parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(ag::backward(x), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = ag::parameter(Tensor::scalar(3.0));
  auto y = ag::elementwise(x, Activation::Square);
  ag::backward(y);
  ag::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  ag::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SharedSubexpressionIsLinear) {
  RngStream rng(8);
  const Tensor x0 = random_tensor(rng, Shape{6});
  auto f = [](const Var& x) { return ag::sum(ag::elementwise(ag::scale(x, 0.7), Activation::Tanh)); };
  auto x1 = ag::parameter(x0);
  ag::backward(f(x1));
  auto x2 = ag::parameter(x0);
  auto fx = f(x2);
  ag::backward(fx + fx);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x2.grad()[i], 2.0 * x1.grad()[i], 1e-14);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  RngStream rng(21);
  const Tensor X = random_tensor(rng, Shape{7, 4});
  const std::vector<Shape> shapes{{4, 6}, {6}, {6, 5}, {5}, {5, 1}, {1}};
  std::vector<double> flat;
  for (const auto& s : shapes)
    for (std::size_t i = 0; i < s.numel(); ++i) flat.push_back(0.5 * rng.normal());

  auto net = [&](const Var& p) {
    std::size_t off = 0;
    auto take = [&](const Shape& s) {
      auto v = ag::slice(p, off, s);
      off += s.numel();
      return v;
    };
    Var h = ag::constant(X);
    const Activation acts[] = {Activation::Elu, Activation::Tanh, Activation::Identity};
    for (int l = 0; l < 3; ++l) {
      auto W = take(shapes[2 * l]);
      auto b = take(shapes[2 * l + 1]);
      h = ag::elementwise(ag::add_row(ag::matmul(h, W), b), acts[l]);
    }
    return ag::mean(ag::elementwise(h, Activation::Square));
  };

  auto p = ag::parameter(Tensor::vector(flat));
  ag::backward(net(p));
  auto fd = finite_difference([&](const std::vector<double>& v) { return net(ag::constant(Tensor::vector(v))).item(); },
                              flat);
  EXPECT_LT(relative_error(to_vector(p.grad()), fd), 1e-5);
}

// Randomly composed scalar programs over every differentiable op.
TEST(Backward, RandomCompositionsMatchFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    RngStream rng(100 + trial);
    const Tensor x0 = random_tensor(rng, Shape{4, 4});
    const Tensor w = random_tensor(rng, Shape{4});
    const int pick = static_cast<int>(rng.below(4));
    auto f = [&](const Var& x) {
      auto gram = ag::add_diagonal(ag::matmul(ag::transpose(x), x), 0.5);
      auto row = ag::scale_rows(ag::constant(w), ag::elementwise(x, Activation::Tanh));
      Var s;
      switch (pick) {
        case 0: s = ag::logdet_spd(gram); break;
        case 1: s = ag::sum(ag::gather_rows(ag::log_softmax_rows(row), {0, 1, 2, 3})); break;
        case 2: s = ag::dot(ag::column(row, 1), ag::reduce(gram, ag::Reduce::Mean, 0)); break;
        default:
          s = ag::sum(ag::elementwise(ag::add_row(x, ag::reduce(row, ag::Reduce::Sum, 0)), Activation::Elu));
      }
      return s + ag::sum(ag::stack_columns({ag::column(x, 0), ag::column(gram, 2)}));
    };
    auto x = ag::parameter(x0);
    ag::backward(f(x));
    auto fd = finite_difference([&](const std::vector<double>& v) { return f(ag::constant(Tensor(Shape{4, 4}, v))).item(); },
                                to_vector(x0));
    EXPECT_LT(relative_error(to_vector(x.grad()), fd), 1e-4) << "trial " << trial;
  }
}

TEST(Kron, MatchesHandProductAndGradient) {
  auto a = ag::constant(Tensor::matrix(2, 1, {1, 2}));
  auto b = ag::constant(Tensor::matrix(1, 2, {3, 4}));
  EXPECT_EQ(to_vector(ag::kron(a, b).value()), (std::vector<double>{3, 4, 6, 8}));

  RngStream rng(9);
  const Tensor a0 = random_tensor(rng, Shape{2, 3});
  const Tensor b0 = random_tensor(rng, Shape{3, 2});
  const Tensor w = random_tensor(rng, Shape{6, 6});
  auto f = [&](const Var& x, const Var& y) { return ag::sum(ag::mul(ag::kron(x, y), ag::constant(w))); };
  auto pa = ag::parameter(a0);
  auto pb = ag::parameter(b0);
  ag::backward(f(pa, pb));
  auto fda = finite_difference(
      [&](const std::vector<double>& v) { return f(ag::constant(Tensor(Shape{2, 3}, v)), ag::constant(b0)).item(); },
      to_vector(a0));
  auto fdb = finite_difference(
      [&](const std::vector<double>& v) { return f(ag::constant(a0), ag::constant(Tensor(Shape{3, 2}, v))).item(); },
      to_vector(b0));
  EXPECT_LT(relative_error(to_vector(pa.grad()), fda), 1e-8);
  EXPECT_LT(relative_error(to_vector(pb.grad()), fdb), 1e-8);
}

TEST(NoGrad, ScopeRecordsNoParents) {
  auto x = ag::parameter(Tensor::vector({1.0, 2.0}));
  {
    ag::NoGradScope guard;
    auto y = ag::sum(ag::elementwise(x, Activation::Square));
    EXPECT_DOUBLE_EQ(y.item(), 5.0);
    EXPECT_TRUE(y.node()->is_leaf());
  }
  auto y = ag::sum(ag::elementwise(x, Activation::Square));
  EXPECT_FALSE(y.node()->is_leaf());
  ag::backward(y);
  EXPECT_EQ(to_vector(x.grad()), (std::vector<double>{2.0, 4.0}));
}

TEST(Rng, FixedSeedIsDeterministic) {
  RngStream a(42), b(42);
  auto ta = ag::sample_standard_normal(a, Shape{2, 3});
  auto tb = ag::sample_standard_normal(b, Shape{2, 3});
  EXPECT_EQ(ta.size(), 6u);
  EXPECT_FALSE(ta.requires_grad());
  EXPECT_EQ(to_vector(ta.value()), to_vector(tb.value()));
}

TEST(Rng, MillionDrawMoments) {
  RngStream rng(2024);
  const std::size_t n = 1'000'000;
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(s2 / n - mean * mean, 1.0, 0.01);
}

TEST(Rng, DerivedStreamsDiffer) {
  RngStream root(7);
  EXPECT_NE(root.derive("data").next_u64(), root.derive("init").next_u64());
  EXPECT_EQ(root.derive("data").next_u64(), root.derive("data").next_u64());
}

}  // namespace
}  // namespace livi
