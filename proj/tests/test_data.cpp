#include "livi/data.hpp"
#include "livi/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace livi {
namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path;
}

std::string ten_rows() {
  std::string s = "a,b,target\n";
  for (int i = 0; i < 10; ++i)
    s += std::to_string(i) + "," + std::to_string(i * i) + "," + std::to_string(2.0 * i + 1.0) + "\n";
  return s;
}

TEST(LoadCsv, SplitsEightTwoAndKeepsTargetColumn) {
  const auto path = write_temp("livi_ten.csv", ten_rows());
  const auto t = load_csv(path, "target", false, 0.8, 1);
  EXPECT_EQ(t.train_idx.size(), 8u);
  EXPECT_EQ(t.test_idx.size(), 2u);
  EXPECT_EQ(t.x.cols(), 2);
  EXPECT_EQ(t.feature_names, (std::vector<std::string>{"a", "b"}));
  for (Eigen::Index i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(t.y(i), 2.0 * t.x(i, 0) + 1.0);
  std::vector<std::size_t> all = t.train_idx;
  all.insert(all.end(), t.test_idx.begin(), t.test_idx.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
}

TEST(LoadCsv, SameSeedSameSplitDifferentSeedUsuallyDiffers) {
  const auto path = write_temp("livi_ten.csv", ten_rows());
  const auto a = load_csv(path, "target", true, 0.8, 7);
  const auto b = load_csv(path, "target", true, 0.8, 7);
  EXPECT_EQ(a.train_idx, b.train_idx);
  EXPECT_EQ(a.x, b.x);
  bool differs = false;
  for (std::uint64_t s = 8; s < 18; ++s) differs |= load_csv(path, "target", false, 0.8, s).train_idx != a.train_idx;
  EXPECT_TRUE(differs);
}

TEST(LoadCsv, StandardizationUsesTrainingStatsAndRoundTrips) {
  const auto path = write_temp("livi_ten.csv", ten_rows());
  const auto raw = load_csv(path, "target", false, 0.8, 3);
  const auto t = load_csv(path, "target", true, 0.8, 3);
  const Dataset tr = t.train();
  for (Eigen::Index j = 0; j < 2; ++j) {
    EXPECT_NEAR(tr.x.col(j).mean(), 0.0, 1e-12);
    const double var = (tr.x.col(j).array() - tr.x.col(j).mean()).square().sum() / (tr.x.rows() - 1.0);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
  EXPECT_NEAR(tr.y.mean(), 0.0, 1e-12);
  EXPECT_LT((t.stats.invert_x(t.x) - raw.x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((t.stats.invert_y(t.y) - raw.y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LoadCsv, QuotedCellsAndBlankLines) {
  const auto path = write_temp("livi_quoted.csv", "\"x one\",y\n\"1.5\",2\n\n3,\"4\"\n");
  const auto t = load_csv(path, "y", false, 1.0, 0);
  EXPECT_EQ(t.x.rows(), 2);
  EXPECT_EQ(t.feature_names[0], "x one");
  EXPECT_DOUBLE_EQ(t.x(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(t.y(1), 4.0);
}

TEST(LoadCsv, IngestionErrorsNameTheLocation) {
  auto message = [](const std::filesystem::path& p, const std::string& target) {
    try {
      load_csv(p, target, false, 0.8, 0);
    } catch (const IngestionError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(write_temp("livi_bad1.csv", "a,y\n1,2\n3,abc\n"), "y").find("row 3"), std::string::npos);
  EXPECT_NE(message(write_temp("livi_bad2.csv", "a,y\n1,2,3\n"), "y").find("expected 2 columns"), std::string::npos);
  EXPECT_NE(message(write_temp("livi_bad3.csv", "a,y\n1,2\n"), "z").find("no column"), std::string::npos);
  EXPECT_NE(message(write_temp("livi_bad4.csv", ""), "y").find("empty"), std::string::npos);
  EXPECT_NE(message(write_temp("livi_bad5.csv", "a,y\n"), "y").find("no data rows"), std::string::npos);
  EXPECT_NE(message("/nonexistent/livi.csv", "y").find("cannot open"), std::string::npos);
  EXPECT_THROW(load_csv(write_temp("livi_ok.csv", "a,y\n1,2\n"), "y", false, 0.0, 0), ConfigError);
}

TEST(ToySinusoid, SeventyPointsOutsideTheGap) {
  const auto t = make_toy_sinusoid({}, 1);
  EXPECT_EQ(t.x.rows(), 70);
  EXPECT_EQ(t.train_idx.size(), 70u);
  EXPECT_FALSE(t.standardized);
  for (Eigen::Index i = 0; i < 70; ++i) {
    const double x = t.x(i, 0);
    EXPECT_TRUE((x >= -3.0 && x <= -1.0) || (x >= 1.0 && x <= 3.0)) << x;
  }
  bool left = false, right = false;
  for (Eigen::Index i = 0; i < 70; ++i) (t.x(i, 0) < 0 ? left : right) = true;
  EXPECT_TRUE(left && right);
}

TEST(ToySinusoid, NoiselessPointsLieOnTheMeanFunction) {
  ToySinusoidConfig cfg;
  cfg.noise = 0.0;
  const auto t = make_toy_sinusoid(cfg, 2);
  for (Eigen::Index i = 0; i < t.x.rows(); ++i) EXPECT_DOUBLE_EQ(t.y(i), std::sin(t.x(i, 0)));
}

TEST(ToySinusoid, ResidualSpreadMatchesNoiseAndSeedIsDeterministic) {
  ToySinusoidConfig cfg;
  cfg.n = 20000;
  const auto t = make_toy_sinusoid(cfg, 3);
  Vector r(t.x.rows());
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = t.y(i) - toy_mean_function(t.x(i, 0));
  const double sd = std::sqrt(r.array().square().mean());
  EXPECT_NEAR(sd, 0.3, 3.0 * 0.3 / std::sqrt(2.0 * 20000.0));
  EXPECT_EQ(make_toy_sinusoid({}, 4).y, make_toy_sinusoid({}, 4).y);
  EXPECT_NE(make_toy_sinusoid({}, 4).y, make_toy_sinusoid({}, 5).y);
  ToySinusoidConfig bad;
  bad.gap_lo = 2.0;
  bad.gap_hi = 1.0;
  EXPECT_THROW(make_toy_sinusoid(bad, 0), ConfigError);
}

TEST(SynthClassify, BalancedLabelsAndDistantOodRing) {
  const auto [in, ood] = make_synth_classify({}, 5);
  EXPECT_EQ(in.x.rows(), 400);
  EXPECT_EQ(ood.x.rows(), 200);
  EXPECT_EQ(in.train_idx.size(), 300u);
  EXPECT_EQ(in.num_classes, 2u);
  EXPECT_DOUBLE_EQ(in.y.sum(), 200.0);
  const double max_in = in.x.rowwise().norm().maxCoeff();
  EXPECT_GE(ood.x.rowwise().norm().minCoeff(), 3.0 * max_in - 1e-12);
  const auto [again, ood_again] = make_synth_classify({}, 5);
  EXPECT_EQ(again.x, in.x);
  EXPECT_EQ(ood_again.x, ood.x);
}

TEST(Dataset, LabelsRejectNonIntegerTargets) {
  Dataset d{Matrix::Zero(2, 1), (Vector(2) << 0.0, 1.5).finished(), 2};
  EXPECT_THROW(d.labels(), DomainError);
  d.y(1) = 2.0;
  EXPECT_THROW(d.labels(), DomainError);
  d.y(1) = 1.0;
  EXPECT_EQ(d.labels(), (std::vector<std::size_t>{0, 1}));
}

TEST(SynthRegression, FollowsFriedmanMeanAndIsSeeded) {
  SynthRegressionConfig cfg;
  cfg.n = 400;
  cfg.noise = 0.0;
  const auto t = make_synth_regression(cfg, 3);
  EXPECT_EQ(t.train_idx.size() + t.test_idx.size(), 400u);
  const Matrix x = t.stats.invert_x(t.x);
  const Vector y = t.stats.invert_y(t.y);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double f = 10.0 * std::sin(std::numbers::pi * x(i, 0) * x(i, 1)) + 20.0 * std::pow(x(i, 2) - 0.5, 2) +
                     10.0 * x(i, 3) + 5.0 * x(i, 4);
    ASSERT_NEAR(y(i), f, 1e-9);
  }
  EXPECT_EQ(make_synth_regression(cfg, 3).y, t.y);
  cfg.features = 4;
  EXPECT_THROW(make_synth_regression(cfg, 3), ConfigError);
}

}  // namespace
}  // namespace livi
