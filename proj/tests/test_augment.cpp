#include <gtest/gtest.h>

#include <sstream>

#include "knockout/augment.hpp"
#include "knockout/random.hpp"

using namespace knockout;

namespace {

PlaceholderPolicy policy2() {
  return PlaceholderPolicy{(Eigen::VectorXd(2) << 10, 10).finished(), (Eigen::VectorXd(2) << -10, -10).finished()};
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST(ApplyKnockout, Definition) {
  auto p = policy2();
  Eigen::VectorXd x = vec({0.3, 0.7});
  EXPECT_EQ(apply_knockout(x, Mask::from_string("10"), p), vec({10, 0.7}));
  EXPECT_EQ(apply_knockout(x, Mask::from_string("00"), p), x);
  EXPECT_EQ(apply_knockout(x, Mask::from_string("11"), p), p.knockout_values);
  EXPECT_THROW(apply_knockout(x, Mask::from_string("1"), p), Error);
}

TEST(ApplyKnockout, IdempotentForFixedMask) {
  Rng rng(3);
  PlaceholderPolicy p{Eigen::VectorXd::Constant(6, 10), Eigen::VectorXd::Constant(6, -10)};
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd x(6);
    Mask m(6);
    for (int i = 0; i < 6; ++i) {
      x(i) = standard_normal(rng);
      m.set(static_cast<std::size_t>(i), bernoulli(rng, 0.5));
    }
    auto once = apply_knockout(x, m, p);
    EXPECT_EQ(apply_knockout(once, m, p), once);
  }
}

TEST(ApplyKnockout, StructuredGroupKnockedAsAWhole) {
  FeatureSchema schema({{"a", StructuredGroup{2, {0, 1}}}, {"b", StructuredGroup{2, {0, 1}}}, {"c", ContinuousUnbounded{}}});
  PlaceholderPolicy p{vec({0, 0, 10}), vec({-1, -1, -10})};
  auto out = apply_knockout(vec({0.5, -0.5, 2}), Mask::from_string("010"), p, schema);
  EXPECT_EQ(out, vec({0, 0, 2}));
}

TEST(MergeObserved, McarMergesMasks) {
  auto p = policy2();
  Eigen::VectorXd x = vec({0.3, 0.7});
  EXPECT_EQ(merge_observed(x, Mask::from_string("10"), Mask::from_string("01"), ObservedMode::mcar, p), vec({10, 10}));
}

TEST(MergeObserved, MnarDualPlaceholderAndOverride) {
  auto p = policy2();
  Eigen::VectorXd x = vec({0.3, 0.7});
  EXPECT_EQ(merge_observed(x, Mask::from_string("10"), Mask::from_string("00"), ObservedMode::mnar, p), vec({-10, 0.7}));
  EXPECT_EQ(merge_observed(x, Mask::from_string("10"), Mask::from_string("10"), ObservedMode::mnar, p), vec({10, 0.7}));
}

TEST(MergeObserved, ModeRequiredWhenObservedMissingness) {
  auto p = policy2();
  Eigen::VectorXd x = vec({0.3, 0.7});
  EXPECT_THROW(merge_observed(x, Mask::from_string("10"), Mask::from_string("00"), std::nullopt, p), Error);
  EXPECT_EQ(merge_observed(x, Mask::from_string("00"), Mask::from_string("01"), std::nullopt, p), vec({0.3, 10}));
}

TEST(MergeObserved, McarEqualsKnockoutWithUnionMask) {
  Rng rng(8);
  PlaceholderPolicy p{Eigen::VectorXd::Constant(5, 10), Eigen::VectorXd::Constant(5, -10)};
  for (int t = 0; t < 300; ++t) {
    Eigen::VectorXd x(5);
    Mask n(5), m(5);
    for (int i = 0; i < 5; ++i) {
      x(i) = standard_normal(rng);
      n.set(static_cast<std::size_t>(i), bernoulli(rng, 0.3));
      m.set(static_cast<std::size_t>(i), bernoulli(rng, 0.3));
    }
    EXPECT_EQ(merge_observed(x, n, m, ObservedMode::mcar, p), apply_knockout(x, n | m, p));

    Eigen::VectorXd row = x;
    merge_observed_inplace(row, n.bits(), m, ObservedMode::mnar, p);
    EXPECT_EQ(row, merge_observed(x, n, m, ObservedMode::mnar, p));
  }
}

TEST(FillForInference, TagsAndWarning) {
  PlaceholderPolicy p{vec({10, 10, 10}), vec({-10, -10, -10})};
  const MissingTag tags[] = {MissingTag::mcar, MissingTag::mnar, MissingTag::observed};
  EXPECT_EQ(fill_for_inference(vec({1, 2, 3}), tags, p, nullptr), vec({10, -10, 3}));

  const MissingTag untagged[] = {MissingTag::untagged, MissingTag::untagged, MissingTag::observed};
  std::ostringstream warn;
  EXPECT_EQ(fill_for_inference(vec({1, 2, 3}), untagged, p, &warn), vec({10, 10, 3}));
  const auto text = warn.str();
  EXPECT_NE(text.find("untagged"), std::string::npos);
  EXPECT_EQ(text.find("untagged"), text.rfind("untagged"));
}
