#include <gtest/gtest.h>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kmp/random.hpp"

using namespace kmp;

namespace {

template <typename Cdf>
double ks(std::vector<double> v, Cdf cdf) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = cdf(v[i]);
    d = std::max({d, std::abs((i + 1) / n - F), std::abs(F - i / n)});
  }
  return d;
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

struct TnCase {
  double mean, sd, lo, hi;
};

class TruncatedNormalTest : public ::testing::TestWithParam<TnCase> {};

TEST_P(TruncatedNormalTest, MatchesTruncatedCdf) {
  const auto c = GetParam();
  boost::math::normal_distribution<> nd(c.mean, c.sd);
  const double plo = std::isinf(c.lo) ? 0.0 : boost::math::cdf(nd, c.lo);
  const double phi = std::isinf(c.hi) ? 1.0 : boost::math::cdf(nd, c.hi);
  Rng rng(11);
  std::vector<double> v;
  for (int i = 0; i < 20000; ++i) {
    const double z = truncated_normal(rng, c.mean, c.sd, c.lo, c.hi);
    ASSERT_GE(z, c.lo);
    ASSERT_LE(z, c.hi);
    v.push_back(z);
  }
  if (phi - plo > 1e-12) {
    EXPECT_LT(ks(v, [&](double x) { return (boost::math::cdf(nd, x) - plo) / (phi - plo); }), 0.015);
  }
}

INSTANTIATE_TEST_SUITE_P(Intervals, TruncatedNormalTest,
                         ::testing::Values(TnCase{0, 1, -1, 1}, TnCase{0, 1, 0.2, 0.4},
                                           TnCase{0, 1, 2, 2.5}, TnCase{0, 1, -3, -2.9},
                                           TnCase{3, 2, -1e300, 0}, TnCase{0, 1, -0.5, 10},
                                           TnCase{0, 10, -50, 50}, TnCase{0, 1, 6, 8}));

TEST(TruncatedNormal, FarTailStaysInside) {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double z = truncated_normal(rng, 0.0, 1.0, 30.0, 30.1);
    EXPECT_GE(z, 30.0);
    EXPECT_LE(z, 30.1);
  }
}

TEST(TruncatedInverseGamma, MatchesTruncatedCdf) {
  // v ~ IG(a, b) on [lo, hi]  <=>  1/v ~ Gamma(a, rate b) on [1/hi, 1/lo].
  const double a = 3.0, b = 0.5, lo = 0.05, hi = 0.4;
  boost::math::gamma_distribution<> g(a, 1.0 / b);
  const double Fl = boost::math::cdf(g, 1.0 / hi), Fu = boost::math::cdf(g, 1.0 / lo);
  Rng rng(13);
  std::vector<double> v;
  for (int i = 0; i < 20000; ++i) v.push_back(truncated_inverse_gamma(rng, a, b, lo, hi));
  EXPECT_LT(ks(v, [&](double x) { return (Fu - boost::math::cdf(g, 1.0 / x)) / (Fu - Fl); }), 0.015);
}

TEST(TruncatedGamma, ExtremeShapeUsesRejection) {
  Rng rng(14);
  for (int i = 0; i < 500; ++i) {
    const double t = truncated_gamma(rng, 5000.0, 1.0, 1.0, 2.0);
    EXPECT_GE(t, 1.0);
    EXPECT_LE(t, 2.0);
  }
}

TEST(Reflect, FoldsIntoInterval) {
  EXPECT_DOUBLE_EQ(reflect_into(1.3, 0.0, 1.0), 0.7);
  EXPECT_DOUBLE_EQ(reflect_into(-0.25, 0.0, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(reflect_into(2.25, 0.0, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(reflect_into(0.5, 0.0, 1.0), 0.5);
}
