#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "cmdp/model.hpp"
#include "cmdp/rng.hpp"

using cmdp::RngStream;

TEST(RngStream, IdenticalSeedAndStreamReproduce) {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a.draws(), 1000u);
}

TEST(RngStream, DistinctStreamsDiffer) {
  RngStream a(42, 0), b(42, 1), c(43, 0);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(RngStream, SplitIsDeterministicAndIndependentOfParentUse) {
  RngStream parent(9);
  const auto child_before = parent.split(3);
  parent.next_u64();
  auto c1 = child_before, c2 = parent.split(3), other = parent.split(4);
  for (int i = 0; i < 100; ++i) {
    const auto v = c1.next_u64();
    ASSERT_EQ(v, c2.next_u64());
    ASSERT_NE(v, other.next_u64());
  }
}

TEST(RngStream, UniformInUnitInterval) {
  RngStream r(1);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.005);
}

TEST(RngStream, BelowCoversRangeUniformly) {
  RngStream r(2);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(RngStream, PoissonMeanAtRateTwo) {
  RngStream r(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += static_cast<double>(r.poisson(2.0));
  EXPECT_NEAR(sum / n, 2.0, 0.02);
}

TEST(RngStream, PoissonLargeRateMeanAndVariance) {
  RngStream r(4);
  const int n = 50000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = static_cast<double>(r.poisson(45.0));
    s += k;
    s2 += k * k;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 45.0, 5 * std::sqrt(45.0 / n));
  EXPECT_NEAR(var, 45.0, 2.0);
}

TEST(RngStream, PoissonZeroRateIsZero) {
  RngStream r(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(r.poisson(0.0), 0u);
}

TEST(RngStream, CategoricalFrequencies) {
  RngStream r(6);
  const std::vector<double> p{0.2, 0.0, 0.5, 0.3};
  std::vector<int> hist(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hist[r.categorical(p)];
  EXPECT_EQ(hist[1], 0);
  for (int k : {0, 2, 3}) EXPECT_NEAR(hist[k] / double(n), p[k], 4 * std::sqrt(p[k] * (1 - p[k]) / n));
}

TEST(RngStream, NormalMoments) {
  RngStream r(7);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(RngStream, ShuffleIsPermutation) {
  RngStream r(8);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(PairwiseSum, MatchesExactSmallSums) {
  std::vector<double> v(1000, 0.1);
  EXPECT_NEAR(cmdp::pairwise_sum(v), 100.0, 1e-12);
  EXPECT_EQ(cmdp::pairwise_sum(std::vector<double>{}), 0.0);
}
