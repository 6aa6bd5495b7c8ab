#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "prism/sim.hpp"
#include "prism/stats.hpp"

using namespace prism;
using namespace prism::sim;

namespace {

SimScenario scenario(OutcomeFamily f, EffectSetting s, int noise, std::size_t n, std::uint64_t seed) {
  SimScenario sc;
  sc.outcome_family = f;
  sc.effect_setting = s;
  sc.n_noise = noise;
  sc.n = n;
  sc.seed = seed;
  return sc;
}

struct ArmDiff {
  double diff;
  double se;
};

ArmDiff arm_difference(const TrialDataset& ds) {
  std::array<std::vector<double>, 2> arms;
  for (std::size_t i = 0; i < ds.n(); ++i) arms[static_cast<std::size_t>(ds.a[i])].push_back(ds.y[i]);
  const double s0 = stats::sample_sd(arms[0]), s1 = stats::sample_sd(arms[1]);
  return {stats::mean(arms[1]) - stats::mean(arms[0]),
          std::sqrt(s0 * s0 / static_cast<double>(arms[0].size()) + s1 * s1 / static_cast<double>(arms[1].size()))};
}

const TrialDataset& large_trial() {
  static const TrialDataset ds =
      generate_trial(scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 100000, 2024));
  return ds;
}

}  // namespace

TEST(Covariates, BinaryRatesFollowQuantileCuts) {
  const TrialDataset& ds = large_trial();
  EXPECT_NEAR(stats::mean(ds.x[kX1]), 0.20, 0.01);
  EXPECT_NEAR(stats::mean(ds.x[kX9]), 0.30, 0.01);
  EXPECT_NEAR(stats::mean(ds.x[kX10]), 0.60, 0.01);
  for (std::size_t j : {kX1, kX9, kX10})
    for (double v : ds.x[j]) ASSERT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Covariates, LatentCorrelations) {
  const TrialDataset& ds = large_trial();
  EXPECT_NEAR(stats::pearson_correlation(ds.x[1], ds.x[5]), 0.30, 0.02);  // X2, X6
  EXPECT_NEAR(stats::pearson_correlation(ds.x[2], ds.x[6]), 0.30, 0.02);  // X3, X7
  EXPECT_NEAR(stats::pearson_correlation(ds.x[1], ds.x[2]), 0.10, 0.02);  // X2, X3
  EXPECT_NEAR(stats::pearson_correlation(ds.x[3], ds.x[11]), 0.10, 0.02);  // X4, X12
}

TEST(Covariates, ContinuousMarginalsAreStandard) {
  const TrialDataset& ds = large_trial();
  for (std::size_t j : {1, 2, 3, 4, 5, 6, 7, 10, 11}) {
    EXPECT_NEAR(stats::mean(ds.x[j]), 0.0, 0.02) << j;
    EXPECT_NEAR(stats::sample_sd(ds.x[j]), 1.0, 0.02) << j;
  }
}

TEST(Covariates, CorrelationMatrixIsPositiveDefinite) {
  for (std::size_t p : {12u, 62u}) {
    const Eigen::MatrixXd c = covariate_correlation(p);
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    EXPECT_EQ(llt.info(), Eigen::Success);
    EXPECT_DOUBLE_EQ(c(0, 4), 0.30);
    EXPECT_DOUBLE_EQ(c(0, 1), 0.10);
  }
}

TEST(Covariates, SameSeedIsBitwiseIdentical) {
  CounterRng a(99), b(99);
  EXPECT_EQ(generate_covariates(500, 6, a), generate_covariates(500, 6, b));
  CounterRng c(100);
  CounterRng d(99);
  EXPECT_NE(generate_covariates(500, 6, c), generate_covariates(500, 6, d));
}

TEST(Covariates, LayoutNeedsSixNoise) {
  CounterRng rng(1);
  EXPECT_THROW(generate_covariates(10, 5, rng), InputError);
}

TEST(TrueEffect, TableValues) {
  const SimScenario cont = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  EXPECT_DOUBLE_EQ(true_effect(1.0, -0.5, 0.8, cont), 0.40);
  EXPECT_DOUBLE_EQ(true_effect(0.0, 0.0, 0.0, cont), 0.0);
  EXPECT_DOUBLE_EQ(true_effect(0.0, -0.20, 0.47, cont), 0.0);  // boundaries belong to the reference cell
  EXPECT_DOUBLE_EQ(true_effect(1.0, 0.5, -1.0, cont), 0.33);
  EXPECT_DOUBLE_EQ(true_effect(0.0, 0.5, 1.0, cont), 0.33);
  EXPECT_DOUBLE_EQ(true_effect(0.0, -1.0, 0.0, cont), 0.30);
  const SimScenario bin = scenario(OutcomeFamily::binary, EffectSetting::subgroup4, 6, 800, 1);
  EXPECT_DOUBLE_EQ(true_effect(1.0, -0.5, 0.8, bin), 0.25);
  EXPECT_DOUBLE_EQ(true_effect(0.0, -1.0, 0.0, bin), 0.11);
}

TEST(TrueEffect, NullIsZeroEverywhere) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::null, 6, 800, 1);
  CounterRng rng(5);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(true_effect(rng.bernoulli(0.2), rng.normal(), rng.normal(), sc), 0.0);
}

TEST(TrueEffect, CellPrevalencesMatchTable) {
  const TrialDataset& ds = large_trial();
  std::array<double, 8> count{};
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const int b1 = ds.x[kX1][i] > 0.5;
    const bool low = ds.x[kX2][i] < -0.20, high = ds.x[kX3][i] > 0.47;
    for (std::size_t c = 0; c < kEffectCells.size(); ++c)
      if (kEffectCells[c].x1 == b1 && kEffectCells[c].x2_low == low && kEffectCells[c].x3_high == high) ++count[c];
  }
  const std::array<double, 8> expected{2, 5, 5, 10, 8, 15, 25, 30};
  double total = 0.0;
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(100.0 * count[c] / static_cast<double>(ds.n()), expected[c], 1.5) << "cell " << c;
    total += count[c];
  }
  EXPECT_EQ(total, static_cast<double>(ds.n()));
}

TEST(TrueEffect, SubgroupsGroupEqualEffects) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  EXPECT_EQ(num_true_subgroups(sc), 4);
  for (const auto& c : kEffectCells)
    for (const auto& d : kEffectCells) EXPECT_EQ(c.true_subgroup == d.true_subgroup, c.continuous_effect == d.continuous_effect);
}

TEST(Outcome, ContinuousInterceptAtZero) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  EXPECT_DOUBLE_EQ(linear_predictor(0, 0, 0, 0, 0, 0, 0, sc), 1.5);
  EXPECT_DOUBLE_EQ(linear_predictor(1, -1, 1, 0, 0, 0, 1, sc), 1.5 + 0.40 + 0.28 + 0.20 + 0.15);
}

TEST(Outcome, BinaryBaselineRateIsThirtyPercent) {
  const SimScenario sc = scenario(OutcomeFamily::binary, EffectSetting::subgroup4, 6, 800, 1);
  const double eta = linear_predictor(0, 0, 0, 0, 0, 0, 0, sc);
  EXPECT_NEAR(logistic(eta), 0.30, 1e-15);
  CounterRng rng(7);
  const int m = 100000;
  double hits = 0;
  for (int i = 0; i < m; ++i) {
    const double y = draw_outcome(eta, sc, rng);
    ASSERT_TRUE(y == 0.0 || y == 1.0);
    hits += y;
  }
  EXPECT_NEAR(hits / m, 0.30, 3.0 * std::sqrt(0.21 / m));
}

TEST(Outcome, ContinuousNoiseScale) {
  CounterRng rng(3);
  std::vector<double> e(100000);
  for (auto& v : e) v = continuous_noise(rng);
  EXPECT_NEAR(stats::mean(e), 0.0, 0.01);
  EXPECT_NEAR(stats::sample_sd(e), 0.85, 0.01);
}

TEST(Outcome, NullArmDifferenceIsZero) {
  const TrialDataset ds = generate_trial(scenario(OutcomeFamily::continuous, EffectSetting::null, 6, 100000, 11));
  const ArmDiff d = arm_difference(ds);
  EXPECT_LT(std::fabs(d.diff), 3.0 * d.se);
}

TEST(Trial, ExactlyHalfPerArm) {
  const TrialDataset ds = generate_trial(scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1));
  EXPECT_EQ(ds.arm_size(0), 400u);
  EXPECT_EQ(ds.arm_size(1), 400u);
  EXPECT_EQ(ds.p(), 12u);
  EXPECT_TRUE(validate(ds).empty());
  EXPECT_THROW(generate_trial(scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 801, 1)), InputError);
}

TEST(Trial, SeededHashIsReproducible) {
  const SimScenario sc = scenario(OutcomeFamily::binary, EffectSetting::subgroup4, 56, 800, 42);
  const TrialDataset a = generate_trial(sc), b = generate_trial(sc);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  SimScenario other = sc;
  other.seed = 43;
  EXPECT_NE(dataset_hash(a), dataset_hash(generate_trial(other)));
  EXPECT_EQ(a.p(), 62u);
}

TEST(Trial, LargeSampleAteNearTable) {
  const TrialDataset& ds = large_trial();
  const ArmDiff d = arm_difference(ds);
  double mean_theta = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i)
    mean_theta += true_effect(ds, i, scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 1, 1));
  mean_theta /= static_cast<double>(ds.n());
  EXPECT_NEAR(mean_theta, 0.237, 0.01);
  EXPECT_NEAR(d.diff, mean_theta, 3.0 * d.se);
}

TEST(Oracle, EveryoneMatchesAte) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  const OraclePopulation pop(sc, 10000, CounterRng(8));
  const double v = pop.effect([](const TrialDataset&, std::size_t) { return true; });
  EXPECT_NEAR(v, 0.2389, 3.0 * std::sqrt(2.0 * 0.95 * 0.95 / 10000.0));
  EXPECT_EQ(pop.patients().arm_size(1), 10000u);
}

TEST(Oracle, NullEveryoneIsZero) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::null, 6, 800, 1);
  const double v = oracle_true_subgroup_effect([](const TrialDataset&, std::size_t) { return true; }, sc, 10000,
                                               CounterRng(9));
  EXPECT_NEAR(v, 0.0, 3.0 * std::sqrt(2.0 * 0.95 * 0.95 / 10000.0));
}

TEST(Oracle, ReferenceCellIsZero) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  const auto rule = [](const TrialDataset& d, std::size_t i) {
    return d.x[kX1][i] == 0.0 && d.x[kX2][i] >= -0.20 && d.x[kX3][i] <= 0.47;
  };
  const double v = oracle_true_subgroup_effect(rule, sc, 10000, CounterRng(10));
  // about 30% of each arm matches the rule
  EXPECT_NEAR(v, 0.0, 3.0 * std::sqrt(2.0 * 0.9 * 0.9 / 3000.0));
}

TEST(Oracle, EmptyRuleThrows) {
  const SimScenario sc = scenario(OutcomeFamily::continuous, EffectSetting::subgroup4, 6, 800, 1);
  const OraclePopulation pop(sc, 100, CounterRng(1));
  EXPECT_THROW(pop.effect([](const TrialDataset&, std::size_t) { return false; }), EmptyCellError);
}
