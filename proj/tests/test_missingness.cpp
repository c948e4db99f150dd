#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "knockout/missingness.hpp"

using namespace knockout;

TEST(CalibrateRate, KnownValues) {
  EXPECT_NEAR(calibrate_rate(9, 0.5), 0.0741, 1e-3);
  EXPECT_DOUBLE_EQ(calibrate_rate(1, 0.5), 0.5);
  EXPECT_NEAR(calibrate_rate(4, 0.5), 0.1591035847462855, 1e-15);
  EXPECT_THROW(calibrate_rate(0, 0.5), Error);
  EXPECT_THROW(calibrate_rate(3, 1.0), Error);
}

TEST(CalibrateRate, MonteCarloAllClearFrequency) {
  const double r = calibrate_rate(4, 0.5);
  auto dist = MaskDistribution::iid(4, r);
  Rng rng(11);
  int clean = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) clean += sample_mask(dist, rng).none();
  EXPECT_NEAR(clean / double(n), 0.5, 0.01);
}

TEST(SampleMask, IidExtremes) {
  Rng rng(1);
  auto zero = MaskDistribution::iid(7, 0.0);
  auto one = MaskDistribution::iid(7, 1.0);
  for (int i = 0; i < 200; ++i) {
    EXPECT_TRUE(sample_mask(zero, rng).none());
    EXPECT_TRUE(sample_mask(one, rng).all());
  }
  EXPECT_THROW(MaskDistribution::iid(3, 1.5), Error);
}

TEST(SampleMask, IidAllZeroFrequency) {
  auto dist = MaskDistribution::iid(5, 0.2);
  Rng rng(3);
  int clean = 0;
  for (int i = 0; i < 100000; ++i) clean += sample_mask(dist, rng).none();
  EXPECT_NEAR(clean / 1e5, std::pow(0.8, 5), 0.01);
}

TEST(SampleMask, GroupedSharesDraw) {
  auto dist = MaskDistribution::grouped(3, {{0, 1}, {2}}, 0.5);
  Rng rng(5);
  int disagree = 0, knocked = 0;
  for (int i = 0; i < 100000; ++i) {
    Mask m = sample_mask(dist, rng);
    disagree += m[0] != m[1];
    knocked += m[0] && m[1];
  }
  EXPECT_EQ(disagree, 0);
  EXPECT_NEAR(knocked / 1e5, 0.5, 0.01);
  EXPECT_THROW(MaskDistribution::grouped(3, {{0, 1}, {1, 2}}, 0.5), Error);
}

TEST(SampleMask, WeightedLaw) {
  std::vector<Mask> pats{Mask::from_string("00"), Mask::from_string("10"), Mask::from_string("01"),
                         Mask::from_string("11")};
  auto dist = MaskDistribution::weighted(pats, {0.1, 0.2, 0.3, 0.4 + 5e-7});
  Rng rng(9);
  std::map<std::string, int> counts;
  for (int i = 0; i < 100000; ++i) ++counts[sample_mask(dist, rng).to_string()];
  EXPECT_NEAR(counts["00"] / 1e5, 0.1, 0.01);
  EXPECT_NEAR(counts["11"] / 1e5, 0.4, 0.01);
  EXPECT_THROW(MaskDistribution::weighted(pats, {0.1, 0.2, 0.3, 0.3}), Error);
}

TEST(InjectMcar, Rates) {
  Dataset d{Eigen::MatrixXd::Ones(3000, 9), Eigen::VectorXd::Zero(3000)};
  Rng rng(2);
  EXPECT_EQ(inject_mcar(d, 0.0, rng).missing.cast<int>().sum(), 0);
  EXPECT_EQ(inject_mcar(d, 1.0, rng).missing.cast<int>().sum(), 3000 * 9);
  auto obs = inject_mcar(d, 0.1, rng);
  EXPECT_NEAR(obs.missing.cast<double>().mean(), 0.1, 0.01);
  EXPECT_EQ(obs.data.x, d.x);
}

TEST(InjectMnar, NearestRankOnOneToHundred) {
  Dataset d{Eigen::MatrixXd(100, 1), Eigen::VectorXd::Zero(100)};
  for (int i = 0; i < 100; ++i) d.x(i, 0) = 100 - i;
  auto obs = inject_mnar_self_censor(d, 0.9);
  EXPECT_EQ(obs.missing.cast<int>().sum(), 10);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(obs.missing(i, 0) == 1, d.x(i, 0) > 90);
}

TEST(InjectMnar, FractionsLimitAndDeterminism) {
  Rng rng(4);
  const int n = 1000;
  Dataset d{Eigen::MatrixXd(n, 3), Eigen::VectorXd::Zero(n)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) d.x(i, j) = standard_normal(rng);
  d.x.col(2).setConstant(1.0);
  d.x(0, 2) = 2.0;
  auto a = inject_mnar_self_censor(d, 0.9);
  auto b = inject_mnar_self_censor(d, 0.9);
  EXPECT_TRUE((a.missing == b.missing).all());
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(a.missing.col(j).cast<double>().mean(), 0.1, 1.0 / n);

  auto lim = inject_mnar_self_censor(d, 1.0 - 1.0 / n);
  for (int j = 0; j < 3; ++j) EXPECT_LE(lim.missing.col(j).cast<int>().sum(), 1);

  const bool flags[] = {true, false, true};
  auto skip = inject_mnar_self_censor(d, 0.9, flags);
  EXPECT_EQ(skip.missing.col(1).cast<int>().sum(), 0);
}

TEST(EnumeratePatterns, CountsOrderAndUniqueness) {
  EXPECT_EQ(enumerate_patterns(9, 3).size(), 130u);
  EXPECT_EQ(enumerate_patterns(3, 3).size(), 8u);
  auto z = enumerate_patterns(5, 0);
  ASSERT_EQ(z.size(), 1u);
  EXPECT_TRUE(z[0].none());

  for (std::size_t d = 1; d <= 8; ++d)
    for (std::size_t k = 0; k <= d; ++k) {
      auto pats = enumerate_patterns(d, k);
      double expected = 0;
      for (std::size_t j = 0; j <= k; ++j) expected += binomial(d, j);
      EXPECT_EQ(pats.size(), static_cast<std::size_t>(expected));
      std::set<std::string> uniq;
      for (const auto& p : pats) {
        EXPECT_LE(p.popcount(), k);
        uniq.insert(p.to_string());
      }
      EXPECT_EQ(uniq.size(), pats.size());
      EXPECT_TRUE(std::is_sorted(pats.begin(), pats.end(), pattern_less));
    }
  auto p3 = enumerate_patterns(3, 1);
  EXPECT_EQ(p3[1].to_string(), "001");
  EXPECT_EQ(p3[3].to_string(), "100");
  EXPECT_THROW(enumerate_patterns(2, 3), Error);
}
