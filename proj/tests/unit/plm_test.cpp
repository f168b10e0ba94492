#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kmp/harness.hpp"
#include "kmp/plm.hpp"

using namespace kmp;

namespace {

double ks_normal(std::vector<double> v, double mean, double sd) {
  std::sort(v.begin(), v.end());
  boost::math::normal_distribution<> nd(mean, sd);
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = boost::math::cdf(nd, v[i]);
    d = std::max({d, std::abs((i + 1) / n - F), std::abs(F - i / n)});
  }
  return d;
}

Eigen::MatrixXd uniform_z(long n, int q, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd z(n, q);
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < q; ++j) z(i, j) = rng.uniform(-1.0, 1.0);
  return z;
}

}  // namespace

TEST(GibbsBeta, ZeroPseudoResponseConcentratesAtZero) {
  const Eigen::MatrixXd z = uniform_z(5000, 3, 1);
  const Eigen::VectorXd eta = Eigen::VectorXd::LinSpaced(5000, -1.0, 1.0);
  const Eigen::MatrixXd ztz = z.transpose() * z;
  Rng rng(2);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
  for (int t = 0; t < 200; ++t) sum += gibbs_beta(z, ztz, eta, eta, 1.0, 1e6, rng);
  EXPECT_LT((sum / 200.0).cwiseAbs().maxCoeff(), 0.01);
}

TEST(GibbsBeta, InterceptOnlyConjugateMean) {
  const long n = 7;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Ones(n, 1);
  Eigen::VectorXd y(n);
  y << 0.3, -1.2, 2.0, 0.5, 0.1, 0.9, -0.4;
  const Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  EXPECT_NEAR(beta_conditional_mean(z, y, eta, 1.0, 1.0)(0), y.sum() / (1.0 + n), 1e-14);
}

TEST(GibbsBeta, DrawsMatchClosedFormNormal) {
  const long n = 12;
  const Eigen::MatrixXd z = uniform_z(n, 2, 3);
  Rng data_rng(4);
  Eigen::VectorXd y(n), eta(n);
  for (long i = 0; i < n; ++i) {
    y(i) = data_rng.normal();
    eta(i) = 0.1 * i;
  }
  const double sigma = 0.7, tau = 2.0;
  // Closed form computed independently via the explicit inverse.
  Eigen::MatrixXd prec = z.transpose() * z / (sigma * sigma);
  prec += Eigen::MatrixXd::Identity(2, 2) / (tau * tau);
  const Eigen::MatrixXd cov = prec.inverse();
  const Eigen::VectorXd mean = cov * z.transpose() * (y - eta) / (sigma * sigma);

  const Eigen::MatrixXd ztz = z.transpose() * z;
  Rng rng(5);
  std::vector<double> b0, b1;
  for (int t = 0; t < 10000; ++t) {
    const Eigen::VectorXd b = gibbs_beta(z, ztz, y, eta, sigma, tau, rng);
    b0.push_back(b(0));
    b1.push_back(b(1));
  }
  EXPECT_LT(ks_normal(b0, mean(0), std::sqrt(cov(0, 0))), 0.02);
  EXPECT_LT(ks_normal(b1, mean(1), std::sqrt(cov(1, 1))), 0.02);
  // Cross-covariance.
  double c = 0.0;
  for (int t = 0; t < 10000; ++t) c += (b0[t] - mean(0)) * (b1[t] - mean(1));
  EXPECT_NEAR(c / 10000, cov(0, 1), 0.05 * std::sqrt(cov(0, 0) * cov(1, 1)));
}

TEST(GibbsBeta, CentredDesignIgnoresConstantShift) {
  Eigen::MatrixXd z = uniform_z(50, 3, 6);
  z = z.rowwise() - z.colwise().mean();
  Rng rng(7);
  Eigen::VectorXd y(50), eta(50);
  for (int i = 0; i < 50; ++i) {
    y(i) = rng.normal();
    eta(i) = rng.normal();
  }
  const Eigen::VectorXd base = beta_conditional_mean(z, y, eta, 1.0, 10.0);
  const Eigen::VectorXd both = beta_conditional_mean(z, (y.array() + 3.0).matrix(),
                                                     (eta.array() + 3.0).matrix(), 1.0, 10.0);
  const Eigen::VectorXd y_only =
      beta_conditional_mean(z, (y.array() + 3.0).matrix(), eta, 1.0, 10.0);
  EXPECT_LT((base - both).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((base - y_only).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RunPlmChain, RequiresCovariates) {
  Dataset d = simulate_regression(truth_sine, 20, 0.1, 8);
  McmcConfig cfg;
  cfg.burnin = 1;
  cfg.samples = 1;
  EXPECT_THROW(run_plm_chain(cfg, PriorConfig{}, 3, d), std::invalid_argument);
}

TEST(RunPlmChain, DeterministicAndSigmaPinned) {
  Eigen::VectorXd beta0(2);
  beta0 << 0.5, -1.0;
  const Dataset d = simulate_plm(120, 9, 1.0, beta0, truth_sine);
  McmcConfig cfg;
  cfg.burnin = 30;
  cfg.samples = 30;
  cfg.seed = 10;
  const auto a = run_plm_chain(cfg, PriorConfig{}, 4, d);
  const auto b = run_plm_chain(cfg, PriorConfig{}, 4, d);
  ASSERT_EQ(a.size(), 30u);
  EXPECT_EQ(a.q(), 2);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a.draws[t].beta, b.draws[t].beta);
    EXPECT_EQ(a.draws[t].params.xi, b.draws[t].params.xi);
    EXPECT_EQ(a.draws[t].params.sigma, 1.0);
  }
}

TEST(RunPlmChain, NullModelIntervalsCalibrated) {
  const int reps = 100, q = 2;
  int covered = 0;
  Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(q);
  for (int r = 0; r < reps; ++r) {
    const Dataset d = simulate_plm(300, 100 + r, 1.0, beta0, [](double) { return 0.0; });
    McmcConfig cfg;
    cfg.burnin = 150;
    cfg.samples = 300;
    cfg.seed = 500 + r;
    const auto draws = run_plm_chain(cfg, PriorConfig{}, 4, d);
    for (int j = 0; j < q; ++j) {
      std::vector<double> b;
      for (const auto& dr : draws.draws) b.push_back(dr.beta(j));
      std::sort(b.begin(), b.end());
      const double lo = b[static_cast<std::size_t>(0.025 * (b.size() - 1))];
      const double hi = b[static_cast<std::size_t>(0.975 * (b.size() - 1))];
      covered += lo <= 0.0 && 0.0 <= hi;
    }
  }
  const double rate = covered / double(reps * q);
  EXPECT_GE(rate, 0.89);
  EXPECT_LE(rate, 0.995);
}

class BenchmarkPlm : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(simulate_plm(500, 11));
    McmcConfig cfg;
    cfg.seed = 12;
    draws_ = new PosteriorDraws(run_plm_chain(cfg, PriorConfig{}, 10, *data_));
  }
  static void TearDownTestSuite() {
    delete draws_;
    delete data_;
  }
  static Dataset* data_;
  static PosteriorDraws* draws_;
};
Dataset* BenchmarkPlm::data_ = nullptr;
PosteriorDraws* BenchmarkPlm::draws_ = nullptr;

TEST_F(BenchmarkPlm, TrueCoefficientsInsideIntervals) {
  const Eigen::VectorXd beta0 = plm_beta0();
  for (int j = 0; j < 8; ++j) {
    std::vector<double> b;
    for (const auto& dr : draws_->draws) b.push_back(dr.beta(j));
    std::sort(b.begin(), b.end());
    const double lo = b[static_cast<std::size_t>(0.025 * (b.size() - 1))];
    const double hi = b[static_cast<std::size_t>(0.975 * (b.size() - 1))];
    EXPECT_LE(lo, beta0(j)) << j;
    EXPECT_GE(hi, beta0(j)) << j;
  }
}

TEST_F(BenchmarkPlm, PosteriorSdNearLimit) {
  const double limit = std::sqrt(3.0 / 500.0);
  for (int j = 0; j < 8; ++j) {
    double m = 0.0, s = 0.0;
    for (const auto& dr : draws_->draws) m += dr.beta(j);
    m /= draws_->size();
    for (const auto& dr : draws_->draws) s += std::pow(dr.beta(j) - m, 2);
    const double sd = std::sqrt(s / (draws_->size() - 1));
    EXPECT_GE(sd, 0.6 * limit) << j;
    EXPECT_LE(sd, 1.6 * limit) << j;
  }
}

TEST_F(BenchmarkPlm, BvmCovarianceNearInverseSecondMoment) {
  const Eigen::MatrixXd ezz = Eigen::MatrixXd::Identity(8, 8) / 3.0;
  const auto diag = bvm_diagnostic(*draws_, *data_, plm_beta0(), truth_plm, ezz);
  EXPECT_LT((diag.ezz_inv - 3.0 * Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-12);
  for (int j = 0; j < 8; ++j) {
    EXPECT_GE(diag.cov_ratio(j), 0.5) << j;
    EXPECT_LE(diag.cov_ratio(j), 2.0) << j;
  }
}

TEST(Bvm, ZeroResidualsGiveZeroCentering) {
  const Eigen::VectorXd beta0 = plm_beta0();
  Dataset d = simulate_plm(50, 13, 0.0);
  const Eigen::MatrixXd ezz = d.z.transpose() * d.z / 50.0;
  const Eigen::VectorXd delta = bvm_centering(d, beta0, truth_plm, ezz, 1.0 / std::sqrt(50.0));
  EXPECT_LT(delta.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bvm, UniformSecondMomentIsOneThird) {
  const Eigen::MatrixXd z = uniform_z(200000, 3, 14);
  const Eigen::MatrixXd ezz = z.transpose() * z / 200000.0;
  EXPECT_LT((ezz - Eigen::MatrixXd::Identity(3, 3) / 3.0).cwiseAbs().maxCoeff(), 0.005);
}

TEST(Bvm, CenteringMatchesLoop) {
  Eigen::VectorXd beta0(3);
  beta0 << 0.2, -0.4, 1.0;
  const Dataset d = simulate_plm(80, 15, 1.0, beta0, truth_sine);
  Eigen::MatrixXd ezz(3, 3);
  ezz << 0.4, 0.05, 0.0, 0.05, 0.3, 0.02, 0.0, 0.02, 0.35;
  const Eigen::VectorXd got = bvm_centering(d, beta0, truth_sine, ezz, 1.0 / std::sqrt(80.0));

  // Naive: accumulate z_i r_i, then multiply by an explicit inverse.
  const Eigen::MatrixXd inv = ezz.inverse();
  Eigen::VectorXd want = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 80; ++i) {
    double r = d.y(i) - truth_sine(d.x(i, 0));
    for (int j = 0; j < 3; ++j) r -= d.z(i, j) * beta0(j);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) want(a) += inv(a, b) * d.z(i, b) * r;
  }
  want /= std::sqrt(80.0);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bvm, SingularSecondMomentThrows) {
  const Dataset d = simulate_plm(20, 16);
  EXPECT_THROW(bvm_centering(d, plm_beta0(), truth_plm, Eigen::MatrixXd::Zero(8, 8), 1.0),
               std::domain_error);
}
