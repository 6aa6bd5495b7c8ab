#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "prism/stats.hpp"
#include "prism/study.hpp"

using namespace prism;
using namespace prism::study;

namespace {

SubgroupEval eval(std::size_t n, double est, double truth, double half_width = 0.1) {
  SubgroupEval s;
  s.n_k = n;
  s.estimate = est;
  s.truth = truth;
  s.ci_low = est - half_width;
  s.ci_high = est + half_width;
  return s;
}

param::SubgroupEstimate with_probability(int k, double p) {
  param::SubgroupEstimate e;
  e.k = k;
  e.probabilities.push_back({0.0, param::Direction::greater, p});
  return e;
}

/// Binary trial with x1/50 events on B and x0/50 on A.
TrialDataset two_proportion_trial(int x1, int x0) {
  TrialDataset ds;
  ds.x = {std::vector<double>(100, 0.0)};
  ds.covariate_names = {"z"};
  ds.covariate_kinds = {CovariateKind::continuous};
  for (int i = 0; i < 100; ++i) {
    const int arm = i < 50 ? 1 : 0;
    const int j = i % 50;
    ds.a.push_back(arm);
    ds.y.push_back(j < (arm ? x1 : x0) ? 1.0 : 0.0);
  }
  return ds;
}

StudyConfig small_study() {
  StudyConfig cfg;
  cfg.scenarios = {sim::SimScenario{}};
  cfg.replicates = 2;
  cfg.num_trees = 50;
  cfg.oracle_m = 2000;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(EstimationMetrics, ExactEstimatesHaveNoErrorAndFullCoverage) {
  const auto m = estimation_metrics({eval(100, 0.4, 0.4), eval(300, -0.1, -0.1)});
  ASSERT_TRUE(m);
  EXPECT_EQ(m->bias_overall, 0.0);
  EXPECT_EQ(m->bias_abs, 0.0);
  EXPECT_EQ(m->mse, 0.0);
  EXPECT_EQ(m->coverage, 1.0);
}

TEST(EstimationMetrics, OffsettingErrorsCancelOnlyInSignedBias) {
  const double d = 0.25;
  const auto m = estimation_metrics({eval(200, 1.0 + d, 1.0, 0.1), eval(200, 2.0 - d, 2.0, 0.1)});
  ASSERT_TRUE(m);
  EXPECT_NEAR(m->bias_overall, 0.0, 1e-15);
  EXPECT_NEAR(m->bias_abs, d, 1e-15);
  EXPECT_NEAR(m->mse, d * d, 1e-15);
  EXPECT_EQ(m->coverage, 0.0);
}

TEST(EstimationMetrics, WeightsBySubgroupSize) {
  // 100 patients with error +1 (covered), 300 with error 0 (covered)
  const auto m = estimation_metrics({eval(100, 1.0, 0.0, 2.0), eval(300, 0.0, 0.0)});
  ASSERT_TRUE(m);
  EXPECT_DOUBLE_EQ(m->bias_overall, 0.25);
  EXPECT_DOUBLE_EQ(m->mse, 0.25);
  EXPECT_DOUBLE_EQ(m->coverage, 1.0);
}

TEST(EstimationMetrics, FlaggedSubgroupsAreSkipped) {
  SubgroupEval bad = eval(500, 9.0, 0.0);
  bad.flagged = true;
  const auto m = estimation_metrics({bad, eval(100, 0.5, 0.5)});
  ASSERT_TRUE(m);
  EXPECT_EQ(m->bias_abs, 0.0);
  EXPECT_FALSE(estimation_metrics({bad}));
}

TEST(SelectionRates, CountsEachClassSeparately) {
  const SelectionRates x1 = variable_selection_rates({"X1"}, 6);
  EXPECT_DOUBLE_EQ(x1.predictive, 1.0 / 3.0);
  EXPECT_EQ(x1.noise, 0.0);
  const SelectionRates root = variable_selection_rates({}, 6);
  EXPECT_EQ(root.predictive, 0.0);
  EXPECT_EQ(root.prognostic, 0.0);
  EXPECT_EQ(root.noise, 0.0);
  const SelectionRates mixed = variable_selection_rates({"X1", "X2", "X3", "X7", "X12"}, 6);
  EXPECT_EQ(mixed.predictive, 1.0);
  EXPECT_DOUBLE_EQ(mixed.prognostic, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(mixed.noise, 1.0 / 6.0);
}

TEST(StandardPractice, PooledTwoProportionZ) {
  // pbar = 0.5, SE = sqrt(0.25 * 2 / 50) = 0.1, z = 2
  const StandardPractice sp = standard_practice_assign(two_proportion_trial(30, 20), OutcomeFamily::binary);
  EXPECT_DOUBLE_EQ(sp.estimate, 0.2);
  EXPECT_NEAR(sp.p_value, 2.0 * (1.0 - stats::normal_cdf(2.0)), 1e-12);
  EXPECT_TRUE(sp.all_b);  // p = 0.0455
  EXPECT_FALSE(standard_practice_assign(two_proportion_trial(30, 20), OutcomeFamily::binary, 0.04).all_b);
}

TEST(StandardPractice, ThresholdIsStrict) {
  sim::SimScenario sc;
  sc.seed = 21;
  const TrialDataset ds = sim::generate_trial(sc);
  const StandardPractice sp = standard_practice_assign(ds, OutcomeFamily::continuous, 1.0);
  ASSERT_GT(sp.p_value, 0.0);
  ASSERT_LT(sp.p_value, 1.0);
  EXPECT_TRUE(standard_practice_assign(ds, OutcomeFamily::continuous, sp.p_value * 1.0001).all_b);
  EXPECT_FALSE(standard_practice_assign(ds, OutcomeFamily::continuous, sp.p_value).all_b);
  double m[2] = {0, 0};
  for (std::size_t i = 0; i < ds.n(); ++i) m[ds.a[i]] += ds.y[i] / static_cast<double>(ds.arm_size(ds.a[i]));
  EXPECT_NEAR(sp.estimate, m[1] - m[0], 1e-10);
}

TEST(PrismAssign, CutoffsApplyPerSubgroup) {
  const std::vector<param::SubgroupEstimate> est{with_probability(0, 0.7), with_probability(1, 0.95),
                                                 with_probability(2, 0.6)};
  const std::vector<int> assign{1, 2, 1, 2};
  EXPECT_EQ(prism_assign(est, assign, 0.5), (std::vector<char>{1, 1, 1, 1}));
  EXPECT_EQ(prism_assign(est, assign, 0.8), (std::vector<char>{1, 0, 1, 0}));
  EXPECT_EQ(prism_assign(est, assign, 0.95), (std::vector<char>{0, 0, 0, 0}));
}

TEST(PrismAssign, FallsBackToPosteriorTail) {
  param::SubgroupEstimate e;
  e.k = 1;
  e.posterior_mean = 1.0;
  e.posterior_var = 1.0;  // P(theta > 0) = 0.841
  const std::vector<param::SubgroupEstimate> est{e, e};
  const std::vector<int> assign{1, 1, 1};
  EXPECT_EQ(prism_assign(est, assign, 0.8), (std::vector<char>{1, 1, 1}));
  EXPECT_EQ(prism_assign(est, assign, 0.85), (std::vector<char>{0, 0, 0}));
  EXPECT_EQ(prism_assign(est, assign, 0.5, param::Direction::less), (std::vector<char>{0, 0, 0}));
}

TEST(Classification, AllBOnSeventyPercentBenefit) {
  std::vector<char> truth(10, 0);
  for (int i = 0; i < 7; ++i) truth[static_cast<std::size_t>(i)] = 1;
  const std::vector<char> all_b(10, 1);
  const Classification c = classification_metrics(all_b, truth);
  EXPECT_DOUBLE_EQ(*c.accuracy, 0.7);
  EXPECT_DOUBLE_EQ(*c.ppv, 0.7);
  EXPECT_FALSE(c.npv);
  EXPECT_EQ(c.assigned_b, 10u);
}

TEST(Classification, PerfectAndWorstCases) {
  const std::vector<char> truth{1, 0, 1, 0, 0};
  const Classification perfect = classification_metrics(truth, truth);
  EXPECT_EQ(*perfect.accuracy, 1.0);
  EXPECT_EQ(*perfect.ppv, 1.0);
  EXPECT_EQ(*perfect.npv, 1.0);
  const std::vector<char> everyone(5, 1), nobody(5, 0);
  const Classification all_a = classification_metrics(nobody, everyone);
  EXPECT_EQ(*all_a.accuracy, 0.0);
  EXPECT_FALSE(all_a.ppv);
  EXPECT_EQ(*all_a.npv, 0.0);
}

TEST(Nesting, DetectsViolationInEitherOrder) {
  const std::vector<char> lo{1, 1, 0}, hi{1, 0, 0}, bad{0, 0, 1};
  EXPECT_TRUE(nested_assignments({0.5, 0.8}, {lo, hi}));
  EXPECT_TRUE(nested_assignments({0.8, 0.5}, {hi, lo}));
  EXPECT_FALSE(nested_assignments({0.5, 0.8}, {lo, bad}));
  EXPECT_FALSE(nested_assignments({0.8, 0.5}, {bad, lo}));
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::mob, Method::prism_a, Method::prism_b, Method::oracle, Method::standard_practice})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("CART"), InputError);
}

TEST(StudyConfig, RejectsBadSettings) {
  StudyConfig cfg = small_study();
  cfg.cutoffs = {1.0};
  EXPECT_THROW(run_study(cfg), InputError);
  cfg = small_study();
  cfg.scenarios[0].n = 801;
  EXPECT_THROW(run_study(cfg), InputError);
  cfg = small_study();
  cfg.replicates = 0;
  EXPECT_THROW(run_study(cfg), InputError);
}

TEST(Study, RelativeEfficiencyOfMobWithItselfIsOne) {
  StudyConfig cfg = small_study();
  cfg.methods = {Method::mob};
  const auto rows = summarize(run_study(cfg));
  const MetricSummary* r = find_metric(rows, cfg.scenarios[0].label(), "MOB", "rel_eff_vs_mob");
  ASSERT_TRUE(r);
  EXPECT_DOUBLE_EQ(r->value, 1.0);
}

TEST(Study, SmallRunEmitsEveryMetric) {
  StudyConfig cfg = small_study();
  const StudyResult res = run_study(cfg);
  ASSERT_EQ(res.records.size(), 2u);
  for (const auto& rec : res.records) {
    ASSERT_EQ(rec.methods.size(), 5u);
    for (const auto& m : rec.methods) EXPECT_FALSE(m.failed) << to_string(m.method) << ": " << m.error;
    EXPECT_EQ(rec.find(Method::oracle)->num_subgroups, 4);
    for (Method m : {Method::prism_a, Method::prism_b, Method::mob}) {
      const MethodRecord* mr = rec.find(m);
      EXPECT_TRUE(mr->nested_cutoffs);
      ASSERT_EQ(mr->assigned_b.size(), 2u);
      EXPECT_EQ(mr->assigned_b[0].size(), 800u);
    }
  }
  const auto rows = summarize(res);
  const std::string label = cfg.scenarios[0].label();
  for (const char* m : {"MOB", "PRISM_A", "PRISM_B", "Oracle"})
    for (const char* metric : {"bias_overall", "bias_abs", "mse", "coverage", "rel_eff_vs_mob"}) {
      EXPECT_TRUE(find_metric(rows, label, m, metric)) << m << " " << metric;
    }
  for (const char* metric : {"predictive_selected", "prognostic_selected", "noise_selected", "accuracy@0.8",
                             "nested_cutoffs", "split_rate"})
    EXPECT_TRUE(find_metric(rows, label, "PRISM_A", metric)) << metric;
  EXPECT_TRUE(find_metric(rows, label, "StandardPractice", "all_b_rate"));
  EXPECT_TRUE(find_metric(rows, label, "StandardPractice", "accuracy"));

  std::ostringstream csv;
  write_tidy_csv(rows, csv);
  EXPECT_EQ(csv.str().rfind("scenario,method,metric,value,mc_se,count,excluded\n", 0), 0u);
}

TEST(Study, ReplicatesDoNotDependOnScheduling) {
  StudyConfig cfg = small_study();
  cfg.methods = {Method::prism_a, Method::standard_practice};
  const StudyResult serial = run_study(cfg);
  cfg.threads = 2;
  const StudyResult parallel = run_study(cfg);
  const ReplicateRecord alone = run_replicate(cfg, 0, 1);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto& a = serial.records[r].methods[0];
    const auto& b = parallel.records[r].methods[0];
    EXPECT_EQ(a.assigned_b, b.assigned_b);
    ASSERT_EQ(a.subgroups.size(), b.subgroups.size());
    for (std::size_t k = 0; k < a.subgroups.size(); ++k) EXPECT_EQ(a.subgroups[k].estimate, b.subgroups[k].estimate);
  }
  EXPECT_EQ(alone.data_seed, serial.records[1].data_seed);
  EXPECT_EQ(alone.methods[0].assigned_b, serial.records[1].methods[0].assigned_b);
}
