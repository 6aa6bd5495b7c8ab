#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/rng.hpp"
#include "prism/sim.hpp"
#include "prism/tree.hpp"

namespace prism::fixtures {

/// X1 ~ Bernoulli(0.5) plus four N(0,1) noise columns; y = 1 + 2 a X1 + N(0, 0.1^2).
inline TrialDataset binary_effect_trial(std::uint64_t seed, std::size_t n = 2000) {
  CounterRng rng(seed);
  TrialDataset ds;
  ds.x.assign(5, std::vector<double>(n));
  ds.covariate_names = {"X1", "Z1", "Z2", "Z3", "Z4"};
  ds.covariate_kinds = {CovariateKind::binary, CovariateKind::continuous, CovariateKind::continuous,
                        CovariateKind::continuous, CovariateKind::continuous};
  ds.a.assign(n, 0);
  for (std::size_t i = n / 2; i < n; ++i) ds.a[i] = 1;
  rng.shuffle(ds.a);
  for (std::size_t i = 0; i < n; ++i) {
    ds.x[0][i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (std::size_t j = 1; j < 5; ++j) ds.x[j][i] = rng.normal();
    ds.y.push_back(1.0 + 2.0 * ds.a[i] * ds.x[0][i] + 0.1 * rng.normal());
  }
  return ds;
}

/// Pure-noise trial: y independent of a and of every covariate.
inline TrialDataset null_noise_trial(std::uint64_t seed, std::size_t n = 800, std::size_t p = 6) {
  CounterRng rng(seed);
  TrialDataset ds;
  ds.x.assign(p, std::vector<double>(n));
  for (std::size_t j = 0; j < p; ++j) {
    ds.covariate_names.push_back("Z" + std::to_string(j + 1));
    ds.covariate_kinds.push_back(CovariateKind::continuous);
  }
  ds.a.assign(n, 0);
  for (std::size_t i = n / 2; i < n; ++i) ds.a[i] = 1;
  rng.shuffle(ds.a);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) ds.x[j][i] = rng.normal();
    ds.y.push_back(rng.normal());
  }
  return ds;
}

inline bool is_single_split_on(const tree::SubgroupTree& t, const std::string& name) {
  return t.num_subgroups() == 2 && !t.nodes[0].terminal && t.nodes[0].covariate_name == name;
}

/// Covariates of a standard simulated trial with theta_hat = 1{X3 > 0.47}.
struct StepPle {
  TrialDataset ds;
  std::vector<double> theta;
};

inline StepPle x3_step_ple(std::uint64_t seed, std::size_t n = 800) {
  sim::SimScenario sc;
  sc.n = n;
  sc.seed = seed;
  StepPle f{sim::generate_trial(sc), {}};
  for (std::size_t i = 0; i < n; ++i) f.theta.push_back(f.ds.x[sim::kX3][i] > sim::kX3Cut ? 1.0 : 0.0);
  return f;
}

/// Gap between the largest X3 at or below 0.47 and the smallest above it.
inline std::pair<double, double> x3_neighborhood(const TrialDataset& ds) {
  double below = -std::numeric_limits<double>::infinity(), above = std::numeric_limits<double>::infinity();
  for (double v : ds.x[sim::kX3]) {
    if (v <= sim::kX3Cut)
      below = std::max(below, v);
    else
      above = std::min(above, v);
  }
  return {below, above};
}

inline bool recovers_x3_step(const tree::SubgroupTree& t, const TrialDataset& ds) {
  if (!is_single_split_on(t, "X3")) return false;
  const auto [lo, hi] = x3_neighborhood(ds);
  return t.nodes[0].cutpoint >= lo && t.nodes[0].cutpoint < hi;
}

}  // namespace prism::fixtures
