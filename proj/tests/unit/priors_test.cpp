#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kmp/priors.hpp"

using namespace kmp;

namespace {

double ks_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  double d = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = (v[i] - lo) / (hi - lo);
    d = std::max({d, std::abs((i + 1) / n - F), std::abs(F - i / n)});
  }
  return d;
}

}  // namespace

TEST(SamplePrior, CentresStayInBlocksAndOffsetsAreCentred) {
  PriorConfig cfg;
  Rng rng(1);
  double sum = 0.0, sum2 = 0.0;
  long count = 0;
  for (int t = 0; t < 10000; ++t) {
    const KmpParams q = sample_prior(cfg, 4, rng);
    for (int b = 0; b < 4; ++b) {
      EXPECT_GE(q.centers(b, 0), b / 4.0 - 1e-15);
      EXPECT_LE(q.centers(b, 0), (b + 1) / 4.0 + 1e-15);
      const double t0 = q.mu_tilde(b, 0);
      sum += t0;
      sum2 += t0 * t0;
      ++count;
    }
  }
  const double mean = sum / count;
  const double se = std::sqrt((sum2 / count - mean * mean) / count);
  EXPECT_LT(std::abs(mean), 3.0 * se);
}

TEST(SamplePrior, CoefficientsRespectTheBox) {
  PriorConfig cfg;
  cfg.B = 50.0;
  cfg.xi_sd = 40.0;
  Rng rng(2);
  for (int t = 0; t < 2000; ++t) EXPECT_LE(sample_prior(cfg, 6, rng).xi.cwiseAbs().maxCoeff(), 50.0);
}

TEST(SamplePrior, BandwidthIsUniform) {
  PriorConfig cfg;
  Rng rng(3);
  std::vector<double> kh;
  for (int t = 0; t < 10000; ++t) kh.push_back(sample_prior(cfg, 5, rng).scaled_bandwidth());
  EXPECT_LT(ks_uniform(kh, 1.2, 2.0), 0.02);
}

TEST(SamplePrior, DrawsAreValidAndInSupport) {
  PriorConfig cfg;
  cfg.m = 1;
  Rng rng(4);
  for (int t = 0; t < 10000; ++t) {
    const int K = 1 + t % 9;
    const KmpParams q = sample_prior(cfg, K, rng, 1 + t % 2);
    ASSERT_NO_THROW(q.validate());
    EXPECT_TRUE(std::isfinite(log_prior_density(cfg, q)));
  }
}

TEST(SamplePrior, InvalidConfigThrows) {
  PriorConfig cfg;
  cfg.h_lo = 0.9;
  Rng rng(5);
  EXPECT_THROW(sample_prior(cfg, 3, rng), ConfigError);
  PriorConfig ok;
  EXPECT_THROW(sample_prior(ok, 0, rng), ConfigError);
}

TEST(LogPrior, OutsideBoxIsMinusInfinity) {
  PriorConfig cfg;
  Rng rng(6);
  KmpParams q = sample_prior(cfg, 3, rng);
  q.xi(0) = cfg.B + 1.0;
  EXPECT_EQ(log_prior_density(cfg, q), -kInf);
  KmpParams r = sample_prior(cfg, 3, rng);
  r.h = 2.5 / 3;
  EXPECT_EQ(log_prior_density(cfg, r), -kInf);
}

TEST(LogPrior, FlatComponentsGiveEqualDensity) {
  PriorConfig cfg;
  cfg.xi_family = XiPriorFamily::uniform;
  Rng rng(7);
  KmpParams a = sample_prior(cfg, 4, rng);
  KmpParams b = sample_prior(cfg, 4, rng);
  b.sigma = a.sigma;
  EXPECT_DOUBLE_EQ(log_prior_density(cfg, a), log_prior_density(cfg, b));
}

TEST(LogPrior, NormalCoefficientRatio) {
  PriorConfig cfg;
  cfg.xi_sd = 10.0;
  EXPECT_DOUBLE_EQ(log_prior_xi(cfg, 0.0, 1.0) - log_prior_xi(cfg, 10.0, 1.0), 0.5);
}

TEST(LogPrior, FiniteExactlyOnSupport) {
  PriorConfig cfg;
  Rng rng(8);
  for (int t = 0; t < 500; ++t) {
    KmpParams q = sample_prior(cfg, 5, rng);
    EXPECT_TRUE(std::isfinite(log_prior_density(cfg, q)));
    q.sigma = cfg.sigma_hi * 1.01;
    EXPECT_EQ(log_prior_density(cfg, q), -kInf);
  }
}

TEST(KTail, Geometric) {
  PriorConfig cfg;
  cfg.k_rho = 0.5;
  EXPECT_EQ(prior_K_tail(cfg, 1), 1.0);
  EXPECT_DOUBLE_EQ(prior_K_tail(cfg, 3), 0.25);
}

TEST(KTail, PoissonMatchesPmfSummation) {
  PriorConfig cfg;
  cfg.k_family = KPriorFamily::poisson;
  cfg.k_lambda = 5.0;
  for (int x = 1; x <= 30; ++x) {
    // 1 - sum_{k<x} pmf(k), pmf built by the recurrence p_{j+1} = p_j lambda / (j+1).
    double pj = std::exp(-5.0), below = 0.0;
    for (int j = 0; j < x - 1; ++j) {
      below += pj;
      pj *= 5.0 / (j + 1);
    }
    EXPECT_NEAR(prior_K_tail(cfg, x), 1.0 - below, 1e-12) << x;
  }
}

TEST(KTail, GeometricEnvelopes) {
  PriorConfig cfg;
  const double b1 = -std::log1p(-cfg.k_rho) * 0.45;
  const double b0 = 1.0;
  for (int x = 2; x <= 100; ++x) {
    const double lt = std::log(prior_K_tail(cfg, x));
    EXPECT_GE(lt, -b0 * x * std::log(x));
    EXPECT_LE(lt, -b1 * x);
  }
}

TEST(KSample, PmfSumsToOneAndSamplesMatch) {
  for (auto fam : {KPriorFamily::geometric, KPriorFamily::poisson}) {
    PriorConfig cfg;
    cfg.k_family = fam;
    double total = 0.0;
    for (int k = 1; k < 200; ++k) total += prior_K_pmf(cfg, k);
    EXPECT_NEAR(total, 1.0, 1e-12);
    Rng rng(9);
    std::vector<int> counts(40, 0);
    const int N = 40000;
    for (int t = 0; t < N; ++t) {
      const int k = sample_K(cfg, rng);
      ASSERT_GE(k, 1);
      if (k < 40) ++counts[k];
    }
    for (int k = 1; k < 8; ++k) {
      const double p = prior_K_pmf(cfg, k);
      EXPECT_NEAR(counts[k] / double(N), p, 4.0 * std::sqrt(p * (1 - p) / N) + 1e-4);
    }
  }
}

TEST(PriorJson, RoundTripAndUnknownKeys) {
  PriorConfig cfg;
  cfg.B = kInf;
  cfg.xi_scale_with_sigma = true;
  cfg.k_family = KPriorFamily::poisson;
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.at("B"), "inf");
  const PriorConfig back = j.get<PriorConfig>();
  EXPECT_TRUE(std::isinf(back.B));
  EXPECT_TRUE(back.xi_scale_with_sigma);
  EXPECT_EQ(back.k_family, KPriorFamily::poisson);
  EXPECT_THROW(nlohmann::json({{"bogus", 1}}).get<PriorConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"h_lo", 0.5}}).get<PriorConfig>(), ConfigError);
}
