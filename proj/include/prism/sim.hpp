#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/rng.hpp"
#include "prism/stats.hpp"

namespace prism::sim {

enum class EffectSetting { null, subgroup4 };

inline const char* to_string(EffectSetting s) { return s == EffectSetting::null ? "null" : "subgroup4"; }

struct SimScenario {
  OutcomeFamily outcome_family = OutcomeFamily::continuous;
  EffectSetting effect_setting = EffectSetting::subgroup4;
  int n_noise = 6;
  std::size_t n = 800;
  std::uint64_t seed = 1;

  std::size_t num_covariates() const { return 6 + static_cast<std::size_t>(n_noise); }
  /// The two noise counts used by the published study.
  bool canonical() const { return n_noise == 6 || n_noise == 56; }
  std::string label() const {
    return std::string(to_string(outcome_family)) + "_" + to_string(effect_setting) + "_noise" +
           std::to_string(n_noise);
  }
};

// Zero-based covariate positions of the named generating-model variables.
inline constexpr std::size_t kX1 = 0, kX2 = 1, kX3 = 2, kX5 = 4, kX7 = 6, kX9 = 8, kX10 = 9;

inline constexpr double kX2Cut = -0.20;
inline constexpr double kX3Cut = 0.47;

/// One cell of the 8-way partition on (X1, X2 < -0.20, X3 > 0.47).
struct EffectCell {
  int x1;
  bool x2_low;   // X2 < -0.20
  bool x3_high;  // X3 > 0.47
  double prevalence_pct;
  double continuous_effect;
  double binary_effect;  // logit-scale coefficient
  int true_subgroup;     // 1..4, grouping cells with equal effect
};

inline constexpr std::array<EffectCell, 8> kEffectCells{{
    {1, true, true, 2, 0.40, 0.25, 1},
    {1, false, true, 5, 0.40, 0.25, 1},
    {1, true, false, 5, 0.40, 0.25, 1},
    {0, true, true, 10, 0.40, 0.25, 1},
    {1, false, false, 8, 0.33, 0.17, 2},
    {0, false, true, 15, 0.33, 0.17, 2},
    {0, true, false, 25, 0.30, 0.11, 3},
    {0, false, false, 30, 0.0, 0.0, 4},
}};

inline const EffectCell& effect_cell(double x1, double x2, double x3) {
  const int b1 = x1 > 0.5 ? 1 : 0;
  const bool low = x2 < kX2Cut;
  const bool high = x3 > kX3Cut;
  for (const auto& c : kEffectCells)
    if (c.x1 == b1 && c.x2_low == low && c.x3_high == high) return c;
  throw NumericError("effect cell lookup failed");  // unreachable: cells are exhaustive
}

/// theta(X) on the generating scale (identity for continuous, logit for binary).
inline double true_effect(double x1, double x2, double x3, const SimScenario& sc) {
  if (sc.effect_setting == EffectSetting::null) return 0.0;
  const auto& c = effect_cell(x1, x2, x3);
  return sc.outcome_family == OutcomeFamily::continuous ? c.continuous_effect : c.binary_effect;
}

inline double true_effect(const TrialDataset& ds, std::size_t row, const SimScenario& sc) {
  return true_effect(ds.x[kX1][row], ds.x[kX2][row], ds.x[kX3][row], sc);
}

/// Index 1..4 of the true subgroup (cells pooled by equal effect); 1 under the null.
inline int true_subgroup(const TrialDataset& ds, std::size_t row, const SimScenario& sc) {
  if (sc.effect_setting == EffectSetting::null) return 1;
  return effect_cell(ds.x[kX1][row], ds.x[kX2][row], ds.x[kX3][row]).true_subgroup;
}

inline int num_true_subgroups(const SimScenario& sc) { return sc.effect_setting == EffectSetting::null ? 1 : 4; }

/// Should a patient receive the test drug? In the null setting every patient
/// is labelled as test-drug, otherwise benefit means theta(X) > 0.
inline bool true_benefit(const TrialDataset& ds, std::size_t row, const SimScenario& sc) {
  if (sc.effect_setting == EffectSetting::null) return true;
  return true_effect(ds, row, sc) > 0.0;
}

/// Latent correlation: 0.10 everywhere except (X1,X5), (X2,X6), (X3,X7) at 0.30.
inline Eigen::MatrixXd covariate_correlation(std::size_t p) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p), 0.10);
  c.diagonal().setOnes();
  const std::array<std::pair<std::size_t, std::size_t>, 3> strong{{{0, 4}, {1, 5}, {2, 6}}};
  for (auto [i, j] : strong) {
    if (i < p && j < p) {
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.30;
      c(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 0.30;
    }
  }
  return c;
}

namespace detail {

inline const Eigen::MatrixXd& cholesky_factor(std::size_t p) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<Eigen::MatrixXd>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[p];
  if (!slot) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariate_correlation(p));
    if (llt.info() != Eigen::Success) throw NumericError("covariate correlation matrix is not positive definite");
    slot = std::make_unique<Eigen::MatrixXd>(llt.matrixL());
  }
  return *slot;
}

inline const std::array<double, 3>& discretization_cuts() {
  static const std::array<double, 3> cuts{stats::normal_quantile(0.80), stats::normal_quantile(0.70),
                                          stats::normal_quantile(0.40)};
  return cuts;
}

}  // namespace detail

/// Column-major covariate table (p x n) drawn from the latent multivariate
/// normal, with X1, X9, X10 discretized.
inline std::vector<std::vector<double>> generate_covariates(std::size_t n, int n_noise, CounterRng& rng) {
  if (n < 1) throw InputError("generate_covariates needs n >= 1");
  if (n_noise < 6) throw InputError("n_noise must be at least 6 (X4..X12 layout)");
  const std::size_t p = 6 + static_cast<std::size_t>(n_noise);
  const Eigen::MatrixXd& L = detail::cholesky_factor(p);
  const auto& cuts = detail::discretization_cuts();
  std::vector<std::vector<double>> x(p, std::vector<double>(n));
  Eigen::VectorXd e(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = rng.normal();
    const Eigen::VectorXd z = L.triangularView<Eigen::Lower>() * e;
    for (std::size_t j = 0; j < p; ++j) x[j][i] = z(static_cast<Eigen::Index>(j));
    x[kX1][i] = x[kX1][i] > cuts[0] ? 1.0 : 0.0;
    x[kX9][i] = x[kX9][i] > cuts[1] ? 1.0 : 0.0;
    x[kX10][i] = x[kX10][i] > cuts[2] ? 1.0 : 0.0;
  }
  return x;
}

/// Standardization of a continuous latent covariate by its population moments
/// (mean 0, sd 1), so this is the identity.
inline constexpr double standardize_latent(double v) { return v; }

/// Noise-free linear predictor: E(Y) for continuous, logit P(Y=1) for binary.
inline double linear_predictor(double x1, double x2, double x3, double x5, double x7, double x10, int a,
                               const SimScenario& sc) {
  const double theta = true_effect(x1, x2, x3, sc);
  const double s2 = standardize_latent(x2), s3 = standardize_latent(x3), s5 = standardize_latent(x5),
               s7 = standardize_latent(x7);
  if (sc.outcome_family == OutcomeFamily::continuous)
    return 1.5 + a * theta + 0.28 * x1 - 0.20 * s2 + 0.15 * s3 + 0.14 * s5 + 0.09 * s7 + 0.22 * x10;
  return std::log(0.30 / 0.70) + a * theta + 0.80 * x1 - 0.50 * s2 + 0.40 * s3 + 0.20 * s5 + 0.20 * s7 + 0.30 * x10;
}

inline double linear_predictor(const TrialDataset& ds, std::size_t row, int a, const SimScenario& sc) {
  const auto& x = ds.x;
  return linear_predictor(x[kX1][row], x[kX2][row], x[kX3][row], x[kX5][row], x[kX7][row], x[kX10][row], a, sc);
}

inline double logistic(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

/// t(20) noise rescaled to standard deviation exactly 0.85.
inline double continuous_noise(CounterRng& rng) {
  constexpr int df = 20;
  return 0.85 * std::sqrt((df - 2.0) / df) * rng.student_t(df);
}

/// Draws one outcome given the linear predictor.
inline double draw_outcome(double eta, const SimScenario& sc, CounterRng& rng) {
  if (sc.outcome_family == OutcomeFamily::continuous) return eta + continuous_noise(rng);
  return rng.bernoulli(logistic(eta)) ? 1.0 : 0.0;
}

inline double generate_outcome(const TrialDataset& ds, std::size_t row, int a, const SimScenario& sc,
                               CounterRng& rng) {
  return draw_outcome(linear_predictor(ds, row, a, sc), sc, rng);
}

inline TrialDataset empty_sim_dataset(std::size_t p) {
  TrialDataset ds;
  ds.x.assign(p, {});
  for (std::size_t j = 0; j < p; ++j) {
    ds.covariate_names.push_back("X" + std::to_string(j + 1));
    const bool binary = j == kX1 || j == kX9 || j == kX10;
    ds.covariate_kinds.push_back(binary ? CovariateKind::binary : CovariateKind::continuous);
  }
  return ds;
}

/// A full synthetic trial with exactly n/2 patients per arm.
inline TrialDataset generate_trial(const SimScenario& sc) {
  if (sc.n < 2 || sc.n % 2 != 0) throw InputError("simulated trial size must be even and >= 2");
  CounterRng root(sc.seed);
  CounterRng cov_rng = root.derive(1), arm_rng = root.derive(2), out_rng = root.derive(3);

  TrialDataset ds = empty_sim_dataset(sc.num_covariates());
  ds.x = generate_covariates(sc.n, sc.n_noise, cov_rng);
  ds.a.assign(sc.n, 0);
  std::fill(ds.a.begin() + static_cast<std::ptrdiff_t>(sc.n / 2), ds.a.end(), 1);
  arm_rng.shuffle(ds.a);
  ds.y.resize(sc.n);
  for (std::size_t i = 0; i < sc.n; ++i) ds.y[i] = generate_outcome(ds, i, ds.a[i], sc, out_rng);
  return ds;
}

/// Fresh patients with m assigned to each arm, used to Monte Carlo the truth
/// E(Y|A=1, rule) - E(Y|A=0, rule) for arbitrary rules.
class OraclePopulation {
 public:
  OraclePopulation(const SimScenario& sc, std::size_t m, CounterRng rng) : patients_(empty_sim_dataset(sc.num_covariates())) {
    if (m < 1) throw InputError("oracle size must be >= 1");
    CounterRng cov_rng = rng.derive(1), out_rng = rng.derive(2);
    patients_.x = generate_covariates(2 * m, sc.n_noise, cov_rng);
    patients_.a.assign(2 * m, 0);
    std::fill(patients_.a.begin(), patients_.a.begin() + static_cast<std::ptrdiff_t>(m), 1);
    patients_.y.resize(2 * m);
    for (std::size_t i = 0; i < 2 * m; ++i)
      patients_.y[i] = generate_outcome(patients_, i, patients_.a[i], sc, out_rng);
  }

  double effect(const RowPredicate& rule) const {
    std::array<double, 2> sum{0.0, 0.0};
    std::array<std::size_t, 2> count{0, 0};
    for (std::size_t i = 0; i < patients_.n(); ++i) {
      if (!rule(patients_, i)) continue;
      sum[patients_.a[i]] += patients_.y[i];
      ++count[patients_.a[i]];
    }
    if (count[0] == 0 || count[1] == 0) throw EmptyCellError("oracle rule matches no patients in one arm");
    return sum[1] / static_cast<double>(count[1]) - sum[0] / static_cast<double>(count[0]);
  }

  const TrialDataset& patients() const { return patients_; }

 private:
  TrialDataset patients_;
};

inline double oracle_true_subgroup_effect(const RowPredicate& rule, const SimScenario& sc, std::size_t m,
                                          CounterRng rng) {
  return OraclePopulation(sc, m, rng).effect(rule);
}

}  // namespace prism::sim
