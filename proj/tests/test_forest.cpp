#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "prism/forest.hpp"
#include "prism/sim.hpp"
#include "prism/stats.hpp"

using namespace prism;
using namespace prism::forest;

namespace {

PleOptions trees(std::size_t n) {
  PleOptions o;
  o.num_trees = n;
  return o;
}

std::vector<std::vector<double>> normal_columns(std::size_t p, std::size_t n, CounterRng& rng) {
  std::vector<std::vector<double>> x(p, std::vector<double>(n));
  for (auto& c : x)
    for (auto& v : c) v = rng.normal();
  return x;
}

Columns view(const std::vector<std::vector<double>>& x) { return Columns(x.begin(), x.end()); }

TrialDataset two_arm_dataset(std::size_t n, CounterRng& rng) {
  TrialDataset ds = sim::empty_sim_dataset(0);
  ds.x = normal_columns(3, n, rng);
  ds.covariate_names = {"u", "v", "w"};
  ds.covariate_kinds.assign(3, CovariateKind::continuous);
  for (std::size_t i = 0; i < n; ++i) ds.a.push_back(static_cast<int>(i % 2));
  ds.y.assign(n, 0.0);
  return ds;
}

}  // namespace

TEST(RegressionForest, ConstantOutcomePredictsConstant) {
  CounterRng rng(1);
  const auto x = normal_columns(3, 200, rng);
  const std::vector<double> y(200, 3.25);
  ForestParams p;
  p.num_trees = 50;
  const ForestModel m = fit_regression_forest(view(x), y, p, 1);
  for (double v : m.predict_all(view(x))) EXPECT_EQ(v, 3.25);
}

TEST(RegressionForest, FullMinNodeGivesSingleLeaf) {
  CounterRng rng(2);
  const std::size_t n = 150;
  const auto x = normal_columns(2, n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[0][i] + rng.normal();
  ForestParams p;
  p.num_trees = 20;
  p.min_node_size = n;
  p.bootstrap = false;
  const ForestModel m = fit_regression_forest(view(x), y, p, 2);
  const double ybar = stats::mean(y);
  for (const auto& t : m.trees) EXPECT_EQ(t.leaf_count(), 1u);
  for (double v : m.predict_all(view(x))) EXPECT_NEAR(v, ybar, 1e-12);
}

TEST(RegressionForest, RecoversStepFunction) {
  CounterRng rng(3);
  const std::size_t n = 2000;
  const auto x = normal_columns(1, n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[0][i] > 0.0 ? 1.0 : 0.0;
  ForestParams p;
  p.num_trees = 200;
  const ForestModel m = fit_regression_forest(view(x), y, p, 3);
  CounterRng test_rng(33);
  const auto xt = normal_columns(1, 2000, test_rng);
  double mse = 0.0;
  for (std::size_t i = 0; i < 2000; ++i) {
    const double truth = xt[0][i] > 0.0 ? 1.0 : 0.0;
    const double d = m.predict(view(xt), i) - truth;
    mse += d * d;
  }
  EXPECT_LE(mse / 2000.0, 0.01);
}

TEST(RegressionForest, LeavesRespectMinNodeSize) {
  CounterRng rng(4);
  const std::size_t n = 400;
  const auto x = normal_columns(3, n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[0][i] * x[1][i] + rng.normal();
  ForestParams p;
  p.num_trees = 30;
  p.min_node_size = 25;
  const ForestModel m = fit_regression_forest(view(x), y, p, 4);
  for (const auto& t : m.trees) {
    for (const auto& nd : t.nodes) {
      if (nd.leaf()) EXPECT_GE(nd.count, 25u);
    }
  }
}

TEST(RegressionForest, PredictionsWithinTrainingRange) {
  CounterRng rng(5);
  const std::size_t n = 300;
  const auto x = normal_columns(4, n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[1][i]) + rng.normal();
  ForestParams p;
  p.num_trees = 100;
  const ForestModel m = fit_regression_forest(view(x), y, p, 5);
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  CounterRng far(55);
  auto xt = normal_columns(4, 500, far);
  for (auto& c : xt)
    for (auto& v : c) v *= 5.0;
  for (double v : m.predict_all(view(xt))) {
    EXPECT_GE(v, *lo);
    EXPECT_LE(v, *hi);
  }
}

TEST(RegressionForest, RowOrderDoesNotMatterWithoutBootstrap) {
  CounterRng rng(6);
  const std::size_t n = 200;
  const auto x = normal_columns(3, n, rng);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[0][i] - x[2][i] + 0.5 * rng.normal();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng(60).shuffle(perm);
  std::vector<std::vector<double>> xp(3, std::vector<double>(n));
  std::vector<double> yp(n);
  for (std::size_t i = 0; i < n; ++i) {
    yp[i] = y[perm[i]];
    for (std::size_t j = 0; j < 3; ++j) xp[j][i] = x[j][perm[i]];
  }
  ForestParams p;
  p.num_trees = 10;
  p.bootstrap = false;
  p.mtry = 3;
  p.min_node_size = 5;
  const ForestModel a = fit_regression_forest(view(x), y, p, 7);
  const ForestModel b = fit_regression_forest(view(xp), yp, p, 7);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a.predict(view(x), i), b.predict(view(x), i), 1e-12);
}

TEST(RegressionForest, SeedDeterminism) {
  CounterRng rng(8);
  const auto x = normal_columns(3, 200, rng);
  std::vector<double> y(200);
  for (auto& v : y) v = rng.normal();
  ForestParams p;
  p.num_trees = 40;
  p.threads = 4;
  const ForestModel a = fit_regression_forest(view(x), y, p, 9);
  p.threads = 1;
  const ForestModel b = fit_regression_forest(view(x), y, p, 9);
  EXPECT_EQ(a.predict_all(view(x)), b.predict_all(view(x)));
}

TEST(CounterfactualPle, IdenticalArmsGiveZeroEffect) {
  CounterRng rng(10);
  TrialDataset ds = two_arm_dataset(200, rng);
  ds.y.assign(ds.n(), 1.75);
  const PleTable ple = counterfactual_ple(ds, FilteredView::all(ds), 1, trees(50));
  for (double t : ple.theta_hat) EXPECT_EQ(t, 0.0);
}

TEST(CounterfactualPle, BalancedTrialHasHalfPropensity) {
  sim::SimScenario sc;
  const TrialDataset ds = sim::generate_trial(sc);
  const PleTable ple = counterfactual_ple(ds, FilteredView::all(ds), 1, trees(20));
  ASSERT_EQ(ple.size(), ds.n());
  for (double p : ple.pi_hat) EXPECT_EQ(p, 0.5);
  for (std::size_t i = 0; i < ds.n(); ++i) EXPECT_EQ(ple.theta_hat[i], ple.mu1_hat[i] - ple.mu0_hat[i]);
}

TEST(CounterfactualPle, NoCovariatesGivesArmMeanDifference) {
  CounterRng rng(11);
  TrialDataset ds = two_arm_dataset(100, rng);
  for (std::size_t i = 0; i < ds.n(); ++i) ds.y[i] = ds.a[i] * 2.0 + rng.normal();
  double m[2] = {0, 0};
  for (std::size_t i = 0; i < ds.n(); ++i) m[ds.a[i]] += ds.y[i] / 50.0;
  const PleTable ple = counterfactual_ple(ds, FilteredView{ds, {}}, 1);
  for (double t : ple.theta_hat) EXPECT_NEAR(t, m[1] - m[0], 1e-12);
}

TEST(CounterfactualPle, ArmPredictionsWithinArmRange) {
  sim::SimScenario sc;
  sc.seed = 12;
  const TrialDataset ds = sim::generate_trial(sc);
  const PleTable ple = counterfactual_ple(ds, FilteredView::all(ds), 2, trees(100));
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (std::size_t i = 0; i < ds.n(); ++i) {
    lo[ds.a[i]] = std::min(lo[ds.a[i]], ds.y[i]);
    hi[ds.a[i]] = std::max(hi[ds.a[i]], ds.y[i]);
  }
  for (std::size_t i = 0; i < ds.n(); ++i) {
    EXPECT_GE(ple.mu0_hat[i], lo[0]);
    EXPECT_LE(ple.mu0_hat[i], hi[0]);
    EXPECT_GE(ple.mu1_hat[i], lo[1]);
    EXPECT_LE(ple.mu1_hat[i], hi[1]);
  }
}

TEST(CounterfactualPle, BinaryEffectsAreRiskDifferences) {
  sim::SimScenario sc;
  sc.outcome_family = OutcomeFamily::binary;
  sc.seed = 13;
  const TrialDataset ds = sim::generate_trial(sc);
  const PleTable ple = counterfactual_ple(ds, FilteredView::all(ds), 3, trees(100));
  for (double t : ple.theta_hat) {
    EXPECT_GE(t, -1.0);
    EXPECT_LE(t, 1.0);
  }
}

TEST(CounterfactualPle, SingleArmIsRejected) {
  CounterRng rng(14);
  TrialDataset ds = two_arm_dataset(20, rng);
  ds.a.assign(20, 1);
  EXPECT_THROW(counterfactual_ple(ds, FilteredView::all(ds), 1), InputError);
}

TEST(CounterfactualPle, TracksTrueEffect) {
  int positive = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    sim::SimScenario sc;
    sc.seed = 700 + r;
    const TrialDataset ds = sim::generate_trial(sc);
    const PleTable ple = counterfactual_ple(ds, FilteredView::all(ds), r);
    std::vector<double> truth(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) truth[i] = sim::true_effect(ds, i, sc);
    positive += stats::pearson_correlation(ple.theta_hat, truth) > 0.0;
  }
  EXPECT_GE(positive, 95);
}
