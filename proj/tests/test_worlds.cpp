#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "knockout/worlds.hpp"

using namespace knockout;

TEST(GaussianWorld, SymmetricAndPsd) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    auto w = sample_gaussian_world(rng);
    EXPECT_EQ((w.covariance - w.covariance.transpose()).cwiseAbs().maxCoeff(), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.covariance);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    EXPECT_GE(w.mean.minCoeff(), 0.0);
    EXPECT_LE(w.mean.maxCoeff(), 1.0);
  }
}

TEST(GaussianWorld, OffDiagonalMoment) {
  Rng rng(2);
  double sum = 0.0;
  int count = 0;
  for (int t = 0; t < 1000; ++t) {
    auto w = sample_gaussian_world(rng);
    for (int i = 0; i < 10; ++i)
      for (int j = i + 1; j < 10; ++j) {
        sum += w.covariance(i, j);
        ++count;
      }
  }
  EXPECT_NEAR(sum / count, 2.5, 0.05);
}

TEST(DrawDataset, MomentsMatchWorld) {
  Rng rng(3);
  auto w = sample_gaussian_world(rng);
  const Eigen::Index n = 100000;
  auto d = draw_dataset(w, n, rng);
  Eigen::MatrixXd all(n, 10);
  all << d.x, d.y;
  Eigen::VectorXd mean = all.colwise().mean();
  for (int k = 0; k < 10; ++k)
    EXPECT_LT(std::abs(mean(k) - w.mean(k)), 4.0 * std::sqrt(w.covariance(k, k) / double(n))) << k;
  Eigen::MatrixXd centered = all.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> diff(cov - w.covariance), full(w.covariance);
  EXPECT_LT(diff.eigenvalues().cwiseAbs().maxCoeff(), 0.03 * full.eigenvalues().maxCoeff());
}

TEST(DrawDataset, EmptyAndReproducible) {
  Rng rng(4);
  auto w = sample_gaussian_world(rng);
  Rng a(5), b(5);
  EXPECT_EQ(draw_dataset(w, 0, a).rows(), 0);
  auto da = draw_dataset(w, 50, a), db = draw_dataset(w, 50, b);
  EXPECT_EQ(da.x, db.x);
  EXPECT_EQ(da.y, db.y);
}

TEST(BayesConditional, EmptySetAndDiagonalWorld) {
  Rng rng(6);
  auto w = sample_gaussian_world(rng);
  Eigen::VectorXd x = Eigen::VectorXd::Random(9);
  EXPECT_EQ(bayes_conditional_mean(w, {}, x), w.mean(9));
  GaussianWorld diag{w.mean, Eigen::MatrixXd(Eigen::VectorXd::LinSpaced(10, 1, 2).asDiagonal())};
  EXPECT_NEAR(bayes_conditional_mean(diag, {0, 3, 5}, x), w.mean(9), 1e-15);
}

TEST(BayesConditional, FullSetMatchesStandardFormula) {
  Rng rng(7);
  auto w = sample_gaussian_world(rng);
  Eigen::VectorXd x = w.mean.head(9) + Eigen::VectorXd::Random(9);
  Eigen::MatrixXd sxx = w.covariance.topLeftCorner(9, 9) + kCovarianceJitter * Eigen::MatrixXd::Identity(9, 9);
  Eigen::VectorXd sxy = w.covariance.col(9).head(9);
  const double direct = w.mean(9) + sxy.dot(sxx.fullPivLu().solve(x - w.mean.head(9)));
  std::vector<Eigen::Index> all{0, 1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_NEAR(bayes_conditional_mean(w, all, x), direct, 1e-6 * std::max(1.0, std::abs(direct)));
}

TEST(BayesConditional, IndependentCoordinateDoesNotMatter) {
  Rng rng(8);
  auto w = sample_gaussian_world(rng);
  w.covariance.row(4).setZero();
  w.covariance.col(4).setZero();
  w.covariance(4, 4) = 1.0;
  Eigen::VectorXd x = Eigen::VectorXd::Random(9);
  Eigen::VectorXd x2 = x;
  x2(4) += 5.0;
  const double with = bayes_conditional_mean(w, {1, 4, 7}, x);
  EXPECT_NEAR(with, bayes_conditional_mean(w, {1, 7}, x), 1e-9);
  EXPECT_NEAR(with, bayes_conditional_mean(w, {1, 4, 7}, x2), 1e-9);
}

TEST(BayesConditional, MatchesMonteCarloRegression) {
  Rng rng(9);
  auto w = sample_gaussian_world(rng);
  const Eigen::Index n = 200000;
  auto d = draw_dataset(w, n, rng);
  std::vector<Eigen::Index> s{0, 2, 6};
  Eigen::MatrixXd design(n, 4);
  design.col(0).setOnes();
  for (int k = 0; k < 3; ++k) design.col(k + 1) = d.x.col(s[static_cast<std::size_t>(k)]);
  Eigen::VectorXd coef = design.colPivHouseholderQr().solve(d.y);
  Eigen::VectorXd resid = d.y - design * coef;
  const double sigma = std::sqrt(resid.squaredNorm() / double(n));
  GaussianConditional oracle(w, s);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x = d.x.row(t).transpose();
    const double mc = coef(0) + coef(1) * x(0) + coef(2) * x(2) + coef(3) * x(6);
    EXPECT_NEAR(oracle(x), mc, 0.02 * sigma + 0.02);
  }
  EXPECT_NEAR((oracle.predict_rows(d.x) - d.y).squaredNorm() / double(n), sigma * sigma, 0.02 * sigma * sigma);
}

TEST(BayesConditional, SingularBlockNamesSet) {
  GaussianWorld w{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3)};
  w.covariance(0, 0) = w.covariance(0, 1) = w.covariance(1, 0) = w.covariance(1, 1) = -1.0;
  w.covariance(2, 2) = 1.0;
  try {
    bayes_conditional_mean(w, {0, 1}, Eigen::VectorXd::Zero(2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("{0,1}"), std::string::npos);
  }
}

TEST(WorldJson, RoundTrip) {
  Rng rng(10);
  auto w = sample_gaussian_world(rng);
  auto back = world_from_json(nlohmann::json::parse(world_to_json(w).dump()));
  EXPECT_EQ(back.mean, w.mean);
  EXPECT_EQ(back.covariance, w.covariance);
}

namespace {

double bayes_error(const MixedClassWorld& w, const Dataset& d) {
  int wrong = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    wrong += (w.posterior1(d.x(i, 0), d.x(i, 1)) > 0.5 ? 1.0 : 0.0) != d.y(i);
  return wrong / double(d.rows());
}

}  // namespace

TEST(ClassWorlds, LabelFrequency) {
  Rng rng(11);
  for (auto w : {MixedClassWorld::continuous2d(), MixedClassWorld::mixed(), MixedClassWorld::separated_gaussians()}) {
    auto d = generate_mixed_classification(w, 10000, rng);
    EXPECT_NEAR(d.y.mean(), 0.5, 0.01);
  }
}

TEST(ClassWorlds, IdenticalClassesGiveCoinFlip) {
  Rng rng(12);
  auto w = MixedClassWorld::separated_gaussians(0.0);
  EXPECT_NEAR(bayes_error(w, generate_mixed_classification(w, 10000, rng)), 0.5, 0.01);
}

TEST(ClassWorlds, SeparatedClassesAreEasy) {
  Rng rng(13);
  auto w = MixedClassWorld::separated_gaussians(5.0);
  EXPECT_LT(bayes_error(w, generate_mixed_classification(w, 10000, rng)), 0.01);
}

TEST(ClassWorlds, MixedWorldParameters) {
  Rng rng(14);
  auto w = MixedClassWorld::mixed();
  auto d = generate_mixed_classification(w, 20000, rng);
  int n1 = 0, hit1 = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    EXPECT_TRUE(d.x(i, 0) == 1.0 || d.x(i, 0) == 2.0);
    if (d.y(i) == 1.0) {
      ++n1;
      hit1 += d.x(i, 0) == 2.0;
    }
  }
  EXPECT_NEAR(hit1 / double(n1), 0.8, 0.015);
  EXPECT_NEAR(w.marginal_posterior1(0, 2.0), 0.8, 1e-15);
}

TEST(EmpiricalConditional, ConstantLabel) {
  Rng rng(15);
  Dataset d{Eigen::MatrixXd(500, 1), Eigen::VectorXd::Ones(500)};
  for (int i = 0; i < 500; ++i) d.x(i, 0) = standard_normal(rng);
  auto est = empirical_conditional(d, 0, 10);
  for (std::size_t k = 0; k < est.cells(); ++k) {
    const double c = static_cast<double>(est.counts[k]);
    EXPECT_DOUBLE_EQ(est.estimate[k], (c + 1) / (c + 2));
  }
  auto raw = empirical_conditional(d, 0, 3, false);
  for (double v : raw.estimate) EXPECT_EQ(v, 1.0);
}

TEST(EmpiricalConditional, IndependentLabelIsHalf) {
  Rng rng(16);
  const int n = 20000;
  Dataset d{Eigen::MatrixXd(n, 1), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = uniform01(rng);
    d.y(i) = bernoulli(rng, 0.5);
  }
  auto est = empirical_conditional(d, 0, 10);
  for (std::size_t k = 0; k < est.cells(); ++k)
    EXPECT_NEAR(est.estimate[k], 0.5, 4.0 * 0.5 / std::sqrt(double(est.counts[k])));
}

TEST(EmpiricalConditional, DiscreteCountsAndEmptyBins) {
  Dataset d{Eigen::MatrixXd(6, 1), Eigen::VectorXd(6)};
  d.x.col(0) << 1, 1, 1, 2, 2, 2;
  d.y << 1, 1, 0, 0, 0, 1;
  auto est = empirical_conditional(d, 0, 0, false, true);
  ASSERT_EQ(est.cells(), 2u);
  EXPECT_DOUBLE_EQ(est.estimate[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(est.estimate[1], 1.0 / 3.0);
  EXPECT_THROW(empirical_conditional(d, 0, 5, false), Error);
  EXPECT_NO_THROW(empirical_conditional(d, 0, 5, true));
}
