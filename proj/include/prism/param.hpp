#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/forest.hpp"
#include "prism/stats.hpp"

namespace prism::param {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct BayesConfig {
  double gamma = 0.0;  // prior variance scale; 0 means gamma = n
  double alpha = 0.05;
  std::vector<double> thresholds{0.0};

  double resolved_gamma(std::size_t n) const { return gamma > 0.0 ? gamma : static_cast<double>(n); }
};

enum class Direction { less, greater };

inline const char* to_string(Direction d) { return d == Direction::less ? "less" : "greater"; }

struct ProbStatement {
  double threshold = 0.0;
  Direction direction = Direction::greater;
  double probability = 0.0;
};

struct Posterior {
  double mean = 0.0;
  double var = 0.0;
};

/// Estimate for one subgroup; k = 0 is the overall population.
struct SubgroupEstimate {
  int k = 0;
  std::size_t n_k = 0;
  std::array<std::size_t, 2> arm_n{0, 0};
  std::array<double, 2> arm_mean{kNaN, kNaN};
  double theta_tilde = kNaN;  // PLE average, or the arm-difference estimate for GLM
  double se = kNaN;
  double naive_ci_low = kNaN;  // t-interval around theta_tilde
  double naive_ci_high = kNaN;
  double posterior_mean = kNaN;
  double posterior_var = kNaN;
  double ci_low = kNaN;
  double ci_high = kNaN;
  double p_value = kNaN;
  std::vector<ProbStatement> probabilities;
  std::string rule = "Overall";
  bool flagged = false;  // estimate could not be formed (e.g. single-arm subgroup)

  double estimate() const { return posterior_mean; }

  double probability(double c, Direction d) const {
    for (const auto& p : probabilities)
      if (p.threshold == c && p.direction == d) return p.probability;
    return kNaN;
  }
};

inline std::vector<std::size_t> members(std::span<const int> assignment, int k) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (k == 0 || assignment[i] == k) rows.push_back(i);
  return rows;
}

/// Mean PLE within subgroup k (k = 0 averages every row).
inline double ple_average(std::span<const double> theta_hat, std::span<const int> assignment, int k) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < theta_hat.size(); ++i) {
    if (k != 0 && assignment[i] != k) continue;
    s += theta_hat[i];
    ++n;
  }
  if (n == 0) throw NumericError("PLE average over an empty subgroup");
  return s / static_cast<double>(n);
}

/// Augmented inverse-propensity pseudo-outcomes.
inline std::vector<double> pseudo_outcomes(const TrialDataset& ds, const forest::PleTable& ple) {
  const std::size_t n = ds.n();
  if (ple.size() != n) throw InputError("PLE table does not match the dataset");
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = ple.pi_hat[i];
    if (!(pi > 0.0 && pi < 1.0)) throw NumericError("propensity must lie strictly inside (0,1)");
    const double a = ds.a[i];
    const double r1 = a * (ds.y[i] - ple.mu1_hat[i]) / pi;
    const double r0 = (1.0 - a) * (ds.y[i] - ple.mu0_hat[i]) / (1.0 - pi);
    ys[i] = r1 - r0 + (ple.mu1_hat[i] - ple.mu0_hat[i]);
  }
  return ys;
}

/// sqrt(n_k^-2 sum (y*_i - theta_tilde)^2) over subgroup k.
inline double se_ple(std::span<const double> ystar, double theta_tilde, std::span<const int> assignment, int k) {
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ystar.size(); ++i) {
    if (k != 0 && assignment[i] != k) continue;
    ss += (ystar[i] - theta_tilde) * (ystar[i] - theta_tilde);
    ++n;
  }
  if (n < 2) throw NumericError("pseudo-outcome SE needs at least 2 patients");
  return std::sqrt(ss) / static_cast<double>(n);
}

inline std::pair<double, double> t_interval(double estimate, double se, double df, double alpha) {
  const double t = stats::t_quantile(1.0 - alpha / 2.0, df);
  return {estimate - t * se, estimate + t * se};
}

/// Normal prior N(theta0, gamma var0) combined with N(theta_tilde, var_tilde).
inline Posterior bayes_update(double theta_tilde, double var_tilde, double theta0, double var0, double gamma) {
  if (!(var_tilde > 0.0) || !(var0 > 0.0) || !(gamma > 0.0))
    throw NumericError("Bayesian update needs positive variances and gamma");
  const double prior_precision = 1.0 / (gamma * var0);
  const double data_precision = 1.0 / var_tilde;
  Posterior post;
  post.var = 1.0 / (prior_precision + data_precision);
  post.mean = post.var * (theta0 * prior_precision + theta_tilde * data_precision);
  return post;
}

inline std::pair<double, double> posterior_interval(const Posterior& post, double alpha) {
  const double sd = std::sqrt(post.var);
  if (sd == 0.0) return {post.mean, post.mean};
  const double z = stats::normal_quantile(1.0 - alpha / 2.0);
  return {post.mean - z * sd, post.mean + z * sd};
}

/// Normal tail area P(theta < c) or P(theta > c).
inline double tail_probability(const Posterior& post, double c, Direction d) {
  const double sd = std::sqrt(post.var);
  if (sd == 0.0) {
    if (d == Direction::greater) return post.mean > c ? 1.0 : 0.0;
    return post.mean < c ? 1.0 : 0.0;
  }
  const double z = (c - post.mean) / sd;
  return d == Direction::less ? stats::normal_cdf(z) : stats::normal_sf(z);
}

inline std::vector<ProbStatement> probability_statements(const Posterior& post, const std::vector<double>& thresholds) {
  std::vector<ProbStatement> out;
  for (double c : thresholds)
    for (Direction d : {Direction::less, Direction::greater}) out.push_back({c, d, tail_probability(post, c, d)});
  return out;
}

inline void fill_arm_summary(SubgroupEstimate& est, const TrialDataset& ds, const std::vector<std::size_t>& rows) {
  std::array<double, 2> sum{0.0, 0.0};
  est.arm_n = {0, 0};
  for (auto r : rows) {
    sum[static_cast<std::size_t>(ds.a[r])] += ds.y[r];
    ++est.arm_n[static_cast<std::size_t>(ds.a[r])];
  }
  for (std::size_t a = 0; a < 2; ++a) est.arm_mean[a] = est.arm_n[a] ? sum[a] / static_cast<double>(est.arm_n[a]) : kNaN;
  est.n_k = rows.size();
}

/// PLE-average estimates with pseudo-outcome SEs and the normal Bayesian
/// update, for k = 0 (overall) through K. The point estimates read only the PLEs.
inline std::vector<SubgroupEstimate> ple_bayes_estimates(const TrialDataset& ds, const forest::PleTable& ple,
                                                         std::span<const int> assignment, int K,
                                                         const BayesConfig& cfg) {
  const std::vector<double> ystar = pseudo_outcomes(ds, ple);
  const double gamma = cfg.resolved_gamma(ds.n());
  std::vector<SubgroupEstimate> out;
  double theta0 = 0.0, var0 = 0.0;
  for (int k = 0; k <= K; ++k) {
    SubgroupEstimate est;
    est.k = k;
    const auto rows = members(assignment, k);
    fill_arm_summary(est, ds, rows);
    est.theta_tilde = ple_average(ple.theta_hat, assignment, k);
    est.se = se_ple(ystar, est.theta_tilde, assignment, k);
    std::tie(est.naive_ci_low, est.naive_ci_high) =
        t_interval(est.theta_tilde, est.se, static_cast<double>(rows.size() - 1), cfg.alpha);
    const double var = est.se * est.se;
    if (k == 0) {
      theta0 = est.theta_tilde;
      var0 = var;
    }
    Posterior post{est.theta_tilde, var};
    if (var > 0.0 && var0 > 0.0) {
      post = bayes_update(est.theta_tilde, var, theta0, var0, gamma);
    } else if (var > 0.0) {
      post = {theta0, 0.0};  // degenerate prior with zero variance
    }
    est.posterior_mean = post.mean;
    est.posterior_var = post.var;
    std::tie(est.ci_low, est.ci_high) = posterior_interval(post, cfg.alpha);
    est.probabilities = probability_statements(post, cfg.thresholds);
    out.push_back(std::move(est));
  }
  return out;
}

/// y ~ a on a row subset: least squares with classical SE (continuous) or the
/// risk difference with Wald SE (binary).
inline SubgroupEstimate glm_arm_difference(const TrialDataset& ds, const std::vector<std::size_t>& rows,
                                           OutcomeFamily family, const BayesConfig& cfg) {
  SubgroupEstimate est;
  fill_arm_summary(est, ds, rows);
  if (est.arm_n[0] == 0 || est.arm_n[1] == 0) {
    est.flagged = true;
    return est;
  }
  const double n0 = static_cast<double>(est.arm_n[0]), n1 = static_cast<double>(est.arm_n[1]);
  const double diff = est.arm_mean[1] - est.arm_mean[0];
  double se = kNaN, df = std::numeric_limits<double>::infinity();
  if (family == OutcomeFamily::continuous) {
    double rss = 0.0;
    for (auto r : rows) {
      const double m = est.arm_mean[static_cast<std::size_t>(ds.a[r])];
      rss += (ds.y[r] - m) * (ds.y[r] - m);
    }
    df = static_cast<double>(rows.size()) - 2.0;
    if (df > 0.0) se = std::sqrt(rss / df * (1.0 / n0 + 1.0 / n1));
  } else {
    const double p0 = est.arm_mean[0], p1 = est.arm_mean[1];
    se = std::sqrt(p1 * (1.0 - p1) / n1 + p0 * (1.0 - p0) / n0);
  }
  est.theta_tilde = diff;
  est.posterior_mean = diff;
  est.se = se;
  if (!std::isfinite(se)) {
    est.flagged = true;
    return est;
  }
  est.posterior_var = se * se;
  if (se > 0.0) {
    const double stat = diff / se;
    if (std::isfinite(df)) {
      std::tie(est.ci_low, est.ci_high) = t_interval(diff, se, df, cfg.alpha);
      est.p_value = stats::t_two_sided_p(stat, df);
    } else {
      const double z = stats::normal_quantile(1.0 - cfg.alpha / 2.0);
      est.ci_low = diff - z * se;
      est.ci_high = diff + z * se;
      est.p_value = 2.0 * stats::normal_sf(std::fabs(stat));
    }
  } else {
    est.ci_low = est.ci_high = diff;
    est.p_value = diff == 0.0 ? 1.0 : 0.0;
  }
  est.naive_ci_low = est.ci_low;
  est.naive_ci_high = est.ci_high;
  est.probabilities = probability_statements({diff, se * se}, cfg.thresholds);
  return est;
}

/// Per-subgroup y ~ a fits for k = 1..K.
inline std::vector<SubgroupEstimate> glm_within_subgroups(const TrialDataset& ds, std::span<const int> assignment,
                                                          int K, OutcomeFamily family, const BayesConfig& cfg = {}) {
  std::vector<SubgroupEstimate> out;
  for (int k = 1; k <= K; ++k) {
    SubgroupEstimate est = glm_arm_difference(ds, members(assignment, k), family, cfg);
    est.k = k;
    out.push_back(std::move(est));
  }
  return out;
}

/// Score interval for a difference of two proportions.
struct RiskDifference {
  double rd = 0.0;
  double ci_low = -1.0;
  double ci_high = 1.0;
};

namespace detail {

/// Restricted MLE of (p1, p0) under p1 - p0 = delta (closed-form cubic root).
inline std::pair<double, double> restricted_mle(double x1, double n1, double x0, double n0, double delta) {
  const double p1 = x1 / n1, p0 = x0 / n0;
  const double theta = n0 / n1;
  const double a = 1.0 + theta;
  const double b = -(1.0 + theta + p1 + theta * p0 + delta * (theta + 2.0));
  const double c = delta * delta + delta * (2.0 * p1 + theta + 1.0) + p1 + theta * p0;
  const double d = -p1 * delta * (1.0 + delta);
  const double v = b * b * b / (27.0 * a * a * a) - b * c / (6.0 * a * a) + d / (2.0 * a);
  const double u2 = b * b / (9.0 * a * a) - c / (3.0 * a);
  double r1;
  if (u2 <= 0.0) {
    r1 = -b / (3.0 * a);
  } else {
    const double u = std::copysign(std::sqrt(u2), v);
    const double ratio = std::clamp(v / (u * u * u), -1.0, 1.0);
    const double w = (std::numbers::pi + std::acos(ratio)) / 3.0;
    r1 = 2.0 * u * std::cos(w) - b / (3.0 * a);
  }
  const double lo = std::max(0.0, delta), hi = std::min(1.0, 1.0 + delta);
  r1 = std::clamp(r1, lo, hi);
  return {r1, std::clamp(r1 - delta, 0.0, 1.0)};
}

}  // namespace detail

/// Miettinen-Nurminen score statistic at delta (difference test minus control).
inline double mn_score(double x1, double n1, double x0, double n0, double delta) {
  const double diff = x1 / n1 - x0 / n0 - delta;
  const auto [r1, r0] = detail::restricted_mle(x1, n1, x0, n0, delta);
  const double N = n1 + n0;
  const double var = (r1 * (1.0 - r1) / n1 + r0 * (1.0 - r0) / n0) * N / (N - 1.0);
  if (!(var > 0.0)) {
    if (diff == 0.0) return 0.0;
    return diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return diff / std::sqrt(var);
}

inline RiskDifference miettinen_nurminen_rd(std::size_t x1, std::size_t n1, std::size_t x0, std::size_t n0,
                                            double alpha = 0.05) {
  if (n1 == 0 || n0 == 0 || x1 > n1 || x0 > n0) throw InputError("invalid counts for a risk difference");
  // Solve in one fixed orientation so swapping the arms negates the interval exactly.
  if (std::pair(x1, n1) > std::pair(x0, n0)) {
    const RiskDifference s = miettinen_nurminen_rd(x0, n0, x1, n1, alpha);
    return {-s.rd, -s.ci_high, -s.ci_low};
  }
  const double X1 = static_cast<double>(x1), N1 = static_cast<double>(n1);
  const double X0 = static_cast<double>(x0), N0 = static_cast<double>(n0);
  const double z = stats::normal_quantile(1.0 - alpha / 2.0);
  RiskDifference out;
  out.rd = X1 / N1 - X0 / N0;
  auto root = [&](double lo, double hi, double target) {
    // score is decreasing in delta; score(lo) > target > score(hi)
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mn_score(X1, N1, X0, N0, mid) > target)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  out.ci_low = mn_score(X1, N1, X0, N0, -1.0) > z ? root(-1.0, out.rd, z) : -1.0;
  out.ci_high = mn_score(X1, N1, X0, N0, 1.0) < -z ? root(out.rd, 1.0, -z) : 1.0;
  out.ci_low = std::clamp(out.ci_low, -1.0, 1.0);
  out.ci_high = std::clamp(out.ci_high, -1.0, 1.0);
  return out;
}

/// Benchmark estimates within the true subgroups (k = 1..K): least squares
/// for continuous outcomes, Miettinen-Nurminen risk differences for binary.
inline std::vector<SubgroupEstimate> oracle_estimate(const TrialDataset& ds, std::span<const int> true_assignment,
                                                     int K, OutcomeFamily family, const BayesConfig& cfg = {}) {
  if (family == OutcomeFamily::continuous) return glm_within_subgroups(ds, true_assignment, K, family, cfg);
  std::vector<SubgroupEstimate> out;
  for (int k = 1; k <= K; ++k) {
    SubgroupEstimate est;
    est.k = k;
    const auto rows = members(true_assignment, k);
    fill_arm_summary(est, ds, rows);
    if (est.arm_n[0] == 0 || est.arm_n[1] == 0) {
      est.flagged = true;
      out.push_back(std::move(est));
      continue;
    }
    std::array<std::size_t, 2> events{0, 0};
    for (auto r : rows)
      if (ds.y[r] > 0.5) ++events[static_cast<std::size_t>(ds.a[r])];
    const RiskDifference rd = miettinen_nurminen_rd(events[1], est.arm_n[1], events[0], est.arm_n[0], cfg.alpha);
    est.theta_tilde = est.posterior_mean = rd.rd;
    est.ci_low = est.naive_ci_low = rd.ci_low;
    est.ci_high = est.naive_ci_high = rd.ci_high;
    est.se = (rd.ci_high - rd.ci_low) / (2.0 * stats::normal_quantile(1.0 - cfg.alpha / 2.0));
    est.posterior_var = est.se * est.se;
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace prism::param
