#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "kmp/harness.hpp"

using namespace kmp;

TEST(Volterra, PartialSumTailAtZero) {
  const double a = volterra_partial_sum(0.0, 1000);
  const double b = volterra_partial_sum(0.0, 1000000);
  EXPECT_LE(std::abs(a - b), volterra_tail_bound(1000));
  EXPECT_NEAR(volterra_tail_bound(1000), 0.0894, 1e-4);
}

TEST(Volterra, NodesMatchReversedSummation) {
  const auto& table = volterra_table();
  ASSERT_EQ(table.terms(), kVolterraTerms);
  for (long j : {0L, 131072L, 333333L, 524288L, 1000000L}) {
    const double x = static_cast<double>(j) / static_cast<double>(table.size());
    // Descending s, long double accumulator.
    long double acc = 0.0L;
    for (long s = kVolterraTerms; s >= 1; --s) {
      const long double sd = static_cast<long double>(s);
      acc += std::sin(sd) / (sd * std::sqrt(sd)) * std::cos((sd - 0.5L) * std::numbers::pi_v<long double> * x);
    }
    EXPECT_NEAR(table.node(j), static_cast<double>(std::numbers::sqrt2_v<long double> * acc), 1e-9) << j;
  }
}

TEST(Volterra, ContinuousOnFineGrid) {
  // |f'| <= sqrt(2) pi sum_{s<=S} s^{-1/2} <= 2 sqrt(2) pi sqrt(S).
  const double lipschitz = 2.0 * std::numbers::sqrt2 * std::numbers::pi * std::sqrt(double(kVolterraTerms));
  double worst = 0.0, prev = truth_volterra(0.0);
  for (int i = 1; i <= 10000; ++i) {
    const double v = truth_volterra(i / 10000.0);
    worst = std::max(worst, std::abs(v - prev));
    prev = v;
  }
  EXPECT_LE(worst, lipschitz * 1e-4);
  EXPECT_THROW(truth_volterra(1.5), std::domain_error);
}

TEST(PlmTruth, Values) {
  EXPECT_EQ(truth_plm(0.0), 0.0);
  EXPECT_NEAR(truth_plm(0.05), 2.5 * std::exp(-0.05), 1e-12);
  EXPECT_NEAR(truth_plm(0.05), 2.378, 5e-4);
  Eigen::VectorXd b(8);
  b << 1.0338, 0.1346, 0.2854, 0.6675, 0.6732, 0.5293, -0.5073, -3.3942;
  EXPECT_EQ(plm_beta0(), b);
}

TEST(Simulate, SeededAndShaped) {
  const Dataset a = simulate_regression(truth_sine, 30, 0.2, 5);
  const Dataset b = simulate_regression(truth_sine, 30, 0.2, 5);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.x, b.x);
  const Dataset p = simulate_plm(40, 6);
  EXPECT_EQ(p.q(), 8);
  EXPECT_LE(p.z.cwiseAbs().maxCoeff(), 1.0);
  std::set<std::uint64_t> seeds;
  for (std::uint64_t r = 0; r < 100; ++r)
    for (std::uint64_t s = 0; s < 5; ++s) seeds.insert(derive_seed(7, r, s));
  EXPECT_EQ(seeds.size(), 500u);
}

TEST(Coverage, OracleAndExactBands) {
  ScenarioSpec spec;
  spec.truth = TruthKind::sine;
  spec.n = 50;
  spec.replicates = 4;
  spec.grid_size = 100;
  spec.estimators = {"oracle", "exact"};
  const auto rep = run_coverage(spec);
  EXPECT_EQ(rep.at("oracle").coverage, Eigen::VectorXd::Ones(100));
  EXPECT_EQ(rep.at("exact").coverage, Eigen::VectorXd::Ones(100));
  EXPECT_EQ(rep.at("exact").width, Eigen::VectorXd::Zero(100));
  EXPECT_EQ(rep.at("exact").mse, Eigen::VectorXd::Zero(4));
  EXPECT_THROW(rep.at("kmp"), std::out_of_range);
}

TEST(Coverage, ReplicatesAreReproducible) {
  ScenarioSpec spec;
  spec.truth = TruthKind::sine;
  spec.n = 120;
  spec.replicates = 3;
  spec.grid_size = 50;
  spec.K = 4;
  spec.mcmc.burnin = 40;
  spec.mcmc.samples = 40;
  spec.estimators = {"kmp", "local_linear", "nw", "fixed_design"};
  spec.threads = 1;
  const auto a = run_coverage(spec);
  spec.threads = 3;
  const auto b = run_coverage(spec);
  ASSERT_EQ(a.estimators.size(), 5u);
  for (std::size_t e = 0; e < a.estimators.size(); ++e) {
    EXPECT_EQ(a.estimators[e].name, b.estimators[e].name);
    EXPECT_EQ(a.estimators[e].coverage, b.estimators[e].coverage);
    EXPECT_EQ(a.estimators[e].mse, b.estimators[e].mse);
    EXPECT_TRUE((a.estimators[e].coverage.array() >= 0.0).all());
    EXPECT_TRUE((a.estimators[e].coverage.array() <= 1.0).all());
  }
}

TEST(Coverage, ConjugateFixedDesignNearNominal) {
  ScenarioSpec spec;
  spec.n = 400;
  spec.noise_sd = 0.5;
  spec.replicates = 200;
  spec.grid_size = 200;
  spec.estimators = {"fixed_design"};
  // Truth inside the model: a member of the K_n-basis with the same degree.
  KmpParams truth = KmpParams::centered(choose_Kn(400, 1.0, 1), 1, spec.prior.m, 2.0);
  Rng rng(8);
  for (Eigen::Index j = 0; j < truth.xi.size(); ++j) truth.xi(j) = rng.normal();
  spec.truth = TruthKind::custom;
  spec.custom_truth = [truth](double x) { return eval_f(truth, std::span<const double>(&x, 1)); };
  const auto rep = run_coverage(spec);
  const double avg = rep.at("fixed_design").coverage.mean();
  EXPECT_GE(avg, 0.85);
  EXPECT_LE(avg, 0.99);
}

TEST(Scenario, JsonRoundTrip) {
  ScenarioSpec spec;
  spec.truth = TruthKind::bump_plm;
  spec.n = 321;
  spec.K = 7;
  spec.windows = {{0.1, 0.2}};
  spec.estimators = {"kmp", "gp_matern52"};
  const nlohmann::json j = spec;
  EXPECT_EQ(j.at("eta0_amplitude"), 2.5);
  const ScenarioSpec back = j.get<ScenarioSpec>();
  EXPECT_EQ(back.truth, TruthKind::bump_plm);
  EXPECT_EQ(back.n, 321);
  EXPECT_EQ(back.K, 7);
  ASSERT_EQ(back.windows.size(), 1u);
  EXPECT_EQ(back.windows[0].hi, 0.2);
  EXPECT_EQ(back.estimators, spec.estimators);
  EXPECT_THROW(nlohmann::json({{"replicas", 3}}).get<ScenarioSpec>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"estimators", {"svm"}}}).get<ScenarioSpec>(), ConfigError);
}

TEST(Benchmark, SmallRun) {
  ScenarioSpec spec;
  spec.n = 150;
  spec.noise_sd = 0.1;
  spec.grid_size = 200;
  spec.mcmc.burnin = 50;
  spec.mcmc.samples = 50;
  spec.prior.k_min = 3;
  spec.prior.k_max = 4;
  spec.estimators = {"kmp", "gp_se", "local_linear"};
  const auto rep = run_benchmark(spec);
  ASSERT_EQ(rep.rows.size(), 3u);
  ASSERT_TRUE(rep.dic.has_value());
  EXPECT_EQ(rep.dic->rows.size(), 2u);
  EXPECT_EQ(rep.at("kmp").K, rep.dic->selected_K);
  EXPECT_GE(rep.at("kmp").total_seconds, rep.at("kmp").seconds);
  for (const auto& r : rep.rows) {
    EXPECT_GT(r.mse, 0.0);
    EXPECT_LT(r.mse, 0.1) << r.estimator;
  }
  EXPECT_TRUE(benchmark_json(rep).contains("rows"));
}
