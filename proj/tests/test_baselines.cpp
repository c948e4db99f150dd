#include <gtest/gtest.h>

#include <sstream>

#include "knockout/baselines.hpp"

using namespace knockout;

namespace {

MaskMatrix no_missing(const Eigen::MatrixXd& x) { return MaskMatrix::Zero(x.rows(), x.cols()); }

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = standard_normal(rng);
  return m;
}

}  // namespace

TEST(MeanMode, MeanAndMode) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 1,  //
      2, 1,   //
      3, 2;
  const bool cat[] = {false, true};
  auto imp = std::get<MeanModeImputer>(fit_imputer({ImputerKind::mean_mode}, x, no_missing(x), cat));
  EXPECT_DOUBLE_EQ(imp.fill(0), 2.0);
  EXPECT_DOUBLE_EQ(imp.fill(1), 1.0);
}

TEST(MeanMode, ExcludesMissingAndRejectsAllMissing) {
  Eigen::MatrixXd x(3, 1);
  x << 1, 3, 100;
  MaskMatrix m(3, 1);
  m << 0, 0, 1;
  EXPECT_DOUBLE_EQ(std::get<MeanModeImputer>(fit_imputer({}, x, m)).fill(0), 2.0);
  m.setOnes();
  EXPECT_THROW(fit_imputer({}, x, m), Error);
}

TEST(MeanMode, ZscoredDataFillsZero) {
  Rng rng(1);
  Eigen::MatrixXd x = random_matrix(rng, 200, 3);
  x = (x.rowwise() - x.colwise().mean()).eval();
  auto imp = fit_imputer({}, x, no_missing(x));
  auto out = impute(imp, Eigen::VectorXd::Ones(3), Mask::from_string("101"));
  EXPECT_NEAR(out(0), 0.0, 1e-12);
  EXPECT_EQ(out(1), 1.0);
  EXPECT_NEAR(out(2), 0.0, 1e-12);
}

TEST(Imputers, IdentityOnCompleteRows) {
  Rng rng(2);
  Eigen::MatrixXd x = random_matrix(rng, 50, 4);
  for (auto kind : {ImputerKind::mean_mode, ImputerKind::knn, ImputerKind::linreg}) {
    auto imp = fit_imputer({kind, 3}, x, no_missing(x));
    for (int t = 0; t < 10; ++t) {
      Eigen::VectorXd row = random_matrix(rng, 4, 1);
      EXPECT_EQ(impute(imp, row, Mask(4)), row);
    }
  }
  auto zi = fit_imputer({ImputerKind::zero_indicator}, x, no_missing(x));
  Eigen::VectorXd row = random_matrix(rng, 4, 1);
  EXPECT_EQ(impute(zi, row, Mask(4)).head(4), row);
}

TEST(ZeroIndicator, WidthAndIndicatorHalf) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 3);
  auto imp = fit_imputer({ImputerKind::zero_indicator}, x, no_missing(x));
  EXPECT_EQ(imputed_width(imp, 3), 6u);
  Eigen::VectorXd row(3);
  row << 4, 5, 6;
  auto out = impute(imp, row, Mask::from_string("010"));
  EXPECT_EQ(out, (Eigen::VectorXd(6) << 4, 0, 6, 0, 1, 0).finished());
}

TEST(Knn, ExactNeighbourAtDistanceZero) {
  Rng rng(3);
  Eigen::MatrixXd x = random_matrix(rng, 40, 4);
  auto imp = fit_imputer({ImputerKind::knn, 1}, x, no_missing(x));
  Eigen::VectorXd row = x.row(17).transpose();
  Eigen::VectorXd probe = row;
  probe(2) = 99.0;
  EXPECT_EQ(impute(imp, probe, Mask::from_string("0010")), row);
}

TEST(Knn, TiesGoToLowestRowIndex) {
  Eigen::MatrixXd x(3, 2);
  x << 0, 7,  //
      1, 3,   //
      0, 5;
  auto imp = fit_imputer({ImputerKind::knn, 1}, x, no_missing(x));
  Eigen::VectorXd row(2);
  row << 0, 0;
  EXPECT_EQ(impute(imp, row, Mask::from_string("01"))(1), 7.0);
}

TEST(Knn, PermutationInvariantWithDistinctDistances) {
  Rng rng(4);
  Eigen::MatrixXd x = random_matrix(rng, 30, 3);
  std::vector<Eigen::Index> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd shuffled(30, 3);
  for (int i = 0; i < 30; ++i) shuffled.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  auto a = fit_imputer({ImputerKind::knn, 5}, x, no_missing(x));
  auto b = fit_imputer({ImputerKind::knn, 5}, shuffled, no_missing(x));
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd row = random_matrix(rng, 3, 1);
    auto m = Mask::from_string(t % 2 ? "100" : "011");
    EXPECT_NEAR((impute(a, row, m) - impute(b, row, m)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
}

TEST(Knn, FallsBackToMeanWithoutSharedCoordinates) {
  Eigen::MatrixXd x(2, 2);
  x << 1, 10,  //
      3, 20;
  MaskMatrix m(2, 2);
  m << 1, 0,  //
      1, 0;
  auto imp = fit_imputer({ImputerKind::knn, 1}, x, MaskMatrix::Zero(2, 2));
  auto& knn = std::get<KnnImputer>(imp);
  knn.train_missing = m;
  Eigen::VectorXd row(2);
  row << 5, 0;
  auto out = impute(imp, row, Mask::from_string("01"));
  EXPECT_EQ(out(1), knn.fallback(1));
}

TEST(LinReg, RecoversLinearRelation) {
  Rng rng(5);
  Eigen::MatrixXd x = random_matrix(rng, 100, 3);
  x.col(2) = 2.0 * x.col(0) - x.col(1) + Eigen::VectorXd::Constant(100, 0.5);
  auto imp = fit_imputer({ImputerKind::linreg}, x, no_missing(x), {}, nullptr);
  Eigen::VectorXd row(3);
  row << 1.0, 2.0, 0.0;
  EXPECT_NEAR(impute(imp, row, Mask::from_string("001"))(2), 0.5, 1e-9);
}

TEST(LinReg, CollinearFeaturesFallBack) {
  Rng rng(6);
  Eigen::MatrixXd x = random_matrix(rng, 60, 3);
  x.col(1) = 2.0 * x.col(0);
  std::ostringstream warn;
  auto imp = std::get<LinRegImputer>(fit_imputer({ImputerKind::linreg}, x, no_missing(x), {}, &warn));
  EXPECT_TRUE(imp.models[2].fallback);
  EXPECT_FALSE(imp.models[0].fallback);
  EXPECT_NE(warn.str().find("rank deficient"), std::string::npos);
  EXPECT_NEAR(impute(imp, Eigen::VectorXd::Ones(3), Mask::from_string("001"))(2), x.col(2).mean(), 1e-12);
}

TEST(LinReg, NeedsEnoughCompleteRows) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  EXPECT_THROW(fit_imputer({ImputerKind::linreg}, x, no_missing(x)), Error);
}

TEST(Dropout, RatesAndRescale) {
  Rng rng(7);
  Eigen::VectorXd row = Eigen::VectorXd::Constant(10, 3.0);
  EXPECT_EQ(dropout_augment(row, 0.0, rng), row);
  EXPECT_EQ(dropout_augment(row, 1.0, rng), Eigen::VectorXd::Zero(10));
  Eigen::VectorXd big = Eigen::VectorXd::Ones(100000);
  auto out = dropout_augment(big, 0.1, rng);
  EXPECT_NEAR((out.array() == 0.0).cast<double>().mean(), 0.1, 0.005);
  auto scaled = dropout_augment(big, 0.5, rng, true);
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_TRUE(scaled(i) == 0.0 || scaled(i) == 2.0);
}

TEST(KnockoutStar, PolicySubstitution) {
  PlaceholderPolicy base{Eigen::VectorXd::Constant(2, 10.0), Eigen::VectorXd::Constant(2, -10.0)};
  MeanModeImputer imp{(Eigen::VectorXd(2) << 0.0, -10.0).finished()};
  auto p = mean_mode_policy(base, imp);
  EXPECT_EQ(p.knockout_values, imp.fill);
  EXPECT_EQ(p.observed_values(0), -10.0);
  EXPECT_EQ(p.observed_values(1), 10.0);
}
