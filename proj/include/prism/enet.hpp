#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/parallel.hpp"
#include "prism/rng.hpp"

namespace prism::enet {

struct ElasticNetOptions {
  double alpha = 0.5;
  std::size_t nlambda = 100;
  /// Smallest lambda as a fraction of lambda_max; defaults to 1e-3 (1e-2 when p > n).
  std::optional<double> lambda_min_ratio;
  std::size_t folds = 10;
  /// Convergence threshold on the largest weighted squared coordinate change per sweep.
  double tol = 1e-18;
  std::size_t max_sweeps = 100000;
  std::size_t max_irls = 100;
  std::size_t threads = 1;
  /// When set, receives the penalized objective after every coordinate sweep.
  std::vector<double>* objective_trace = nullptr;
};

/// Solution at one lambda. Coefficients are on the original covariate scale.
struct PathPoint {
  double lambda = 0.0;
  double intercept = 0.0;
  std::vector<double> beta;
  std::vector<double> beta_standardized;
  std::size_t sweeps = 0;
};

struct ElasticNetFit {
  OutcomeFamily family = OutcomeFamily::continuous;
  double alpha = 0.5;
  std::vector<double> lambdas;  // strictly decreasing
  std::vector<PathPoint> path;
  std::vector<double> cv_mean;
  std::vector<double> cv_se;
  std::vector<int> fold_ids;
  std::size_t chosen = 0;

  double chosen_lambda() const { return lambdas[chosen]; }
  const PathPoint& chosen_point() const { return path[chosen]; }
};

namespace detail {

inline double soft_threshold(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

/// Columns scaled to mean 0 and (1/n) sum of squares 1; constant columns flagged.
struct Standardized {
  std::vector<std::vector<double>> xs;
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> constant;
  std::size_t n = 0;

  Standardized(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& rows) {
    n = rows.size();
    const std::size_t p = x.size();
    xs.assign(p, std::vector<double>(n));
    mean.assign(p, 0.0);
    sd.assign(p, 0.0);
    constant.assign(p, false);
    for (std::size_t j = 0; j < p; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += x[j][rows[i]];
      m /= static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += (x[j][rows[i]] - m) * (x[j][rows[i]] - m);
      const double s = std::sqrt(ss / static_cast<double>(n));
      mean[j] = m;
      sd[j] = s;
      constant[j] = !(s > 1e-12 * (1.0 + std::fabs(m)));
      for (std::size_t i = 0; i < n; ++i) xs[j][i] = constant[j] ? 0.0 : (x[j][rows[i]] - m) / s;
    }
  }
};

inline double penalty(const std::vector<double>& beta, double lambda, double alpha) {
  double l1 = 0.0, l2 = 0.0;
  for (double b : beta) {
    l1 += std::fabs(b);
    l2 += b * b;
  }
  return lambda * ((1.0 - alpha) * 0.5 * l2 + alpha * l1);
}

/// Coordinate descent for (1/2n) sum w_i (z_i - b0 - xs_i b)^2 + penalty, warm-started.
inline std::size_t weighted_cd(const Standardized& st, const std::vector<double>& z, const std::vector<double>& w,
                               double lambda, double alpha, double& beta0, std::vector<double>& beta,
                               const ElasticNetOptions& opt, bool update_intercept) {
  const std::size_t n = st.n, p = st.xs.size();
  const double dn = static_cast<double>(n);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double fit = beta0;
    for (std::size_t j = 0; j < p; ++j)
      if (beta[j] != 0.0) fit += st.xs[j][i] * beta[j];
    r[i] = z[i] - fit;
  }
  std::vector<double> v(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    if (st.constant[j]) continue;
    for (std::size_t i = 0; i < n; ++i) v[j] += w[i] * st.xs[j][i] * st.xs[j][i];
    v[j] /= dn;
  }
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);

  std::size_t sweep = 0;
  for (; sweep < opt.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (st.constant[j] || v[j] <= 0.0) continue;
      const auto& xj = st.xs[j];
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) g += w[i] * xj[i] * r[i];
      g /= dn;
      const double updated = soft_threshold(g + v[j] * beta[j], lambda * alpha) / (v[j] + lambda * (1.0 - alpha));
      const double d = updated - beta[j];
      if (d != 0.0) {
        for (std::size_t i = 0; i < n; ++i) r[i] -= d * xj[i];
        beta[j] = updated;
        max_change = std::max(max_change, v[j] * d * d);
      }
    }
    if (update_intercept && wsum > 0.0) {
      double d0 = 0.0;
      for (std::size_t i = 0; i < n; ++i) d0 += w[i] * r[i];
      d0 /= wsum;
      if (d0 != 0.0) {
        beta0 += d0;
        for (std::size_t i = 0; i < n; ++i) r[i] -= d0;
        max_change = std::max(max_change, wsum / dn * d0 * d0);
      }
    }
    if (opt.objective_trace) {
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) loss += w[i] * r[i] * r[i];
      opt.objective_trace->push_back(loss / (2.0 * dn) + penalty(beta, lambda, alpha));
    }
    if (max_change < opt.tol) {
      ++sweep;
      break;
    }
  }
  return sweep;
}

inline double clamp_prob(double p) { return std::clamp(p, 1e-5, 1.0 - 1e-5); }

/// Solves at one lambda on standardized data, warm-started from (beta0, beta).
inline std::size_t solve_standardized(const Standardized& st, const std::vector<double>& y, OutcomeFamily family,
                                      double lambda, double alpha, double& beta0, std::vector<double>& beta,
                                      const ElasticNetOptions& opt) {
  const std::size_t n = st.n, p = st.xs.size();
  if (family == OutcomeFamily::continuous) {
    const std::vector<double> w(n, 1.0);
    return weighted_cd(st, y, w, lambda, alpha, beta0, beta, opt, true);
  }
  std::size_t sweeps = 0;
  std::vector<double> w(n), z(n);
  for (std::size_t it = 0; it < opt.max_irls; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double eta = beta0;
      for (std::size_t j = 0; j < p; ++j)
        if (beta[j] != 0.0) eta += st.xs[j][i] * beta[j];
      const double pr = clamp_prob(1.0 / (1.0 + std::exp(-eta)));
      w[i] = pr * (1.0 - pr);
      z[i] = eta + (y[i] - pr) / w[i];
    }
    const double old0 = beta0;
    const std::vector<double> old = beta;
    ElasticNetOptions inner = opt;
    inner.objective_trace = nullptr;
    sweeps += weighted_cd(st, z, w, lambda, alpha, beta0, beta, inner, true);
    double change = (beta0 - old0) * (beta0 - old0);
    for (std::size_t j = 0; j < p; ++j) change = std::max(change, (beta[j] - old[j]) * (beta[j] - old[j]));
    if (opt.objective_trace) {
      double nll = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double eta = beta0;
        for (std::size_t j = 0; j < p; ++j) eta += st.xs[j][i] * beta[j];
        nll += std::log1p(std::exp(-std::fabs(eta))) + std::max(eta, 0.0) - y[i] * eta;
      }
      opt.objective_trace->push_back(nll / static_cast<double>(n) + penalty(beta, lambda, alpha));
    }
    if (change < opt.tol) break;
  }
  return sweeps;
}

inline PathPoint to_original_scale(const Standardized& st, double lambda, double beta0, const std::vector<double>& beta,
                                   std::size_t sweeps) {
  PathPoint pt;
  pt.lambda = lambda;
  pt.beta_standardized = beta;
  pt.beta.assign(beta.size(), 0.0);
  pt.intercept = beta0;
  for (std::size_t j = 0; j < beta.size(); ++j) {
    if (st.constant[j]) continue;
    pt.beta[j] = beta[j] / st.sd[j];
    pt.intercept -= pt.beta[j] * st.mean[j];
  }
  pt.sweeps = sweeps;
  return pt;
}

inline void check_inputs(const std::vector<std::vector<double>>& x, const std::vector<double>& y, OutcomeFamily family,
                         double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("elastic net alpha must lie in [0,1]");
  for (double v : y)
    if (!std::isfinite(v)) throw InputError("elastic net outcome has non-finite values");
  if (family == OutcomeFamily::binary)
    for (double v : y)
      if (v != 0.0 && v != 1.0) throw InputError("binomial elastic net needs a 0/1 outcome");
  for (const auto& col : x) {
    if (col.size() != y.size()) throw InputError("elastic net covariate length mismatch");
    for (double v : col)
      if (!std::isfinite(v)) throw InputError("elastic net covariates have non-finite values");
  }
}

inline std::vector<double> gather(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

inline double initial_intercept(const std::vector<double>& y, OutcomeFamily family) {
  const double m = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  if (family == OutcomeFamily::continuous) return m;
  const double pm = clamp_prob(m);
  return std::log(pm / (1.0 - pm));
}

/// Full warm-started path over `lambdas` on the given rows.
inline std::vector<PathPoint> fit_path(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                       const std::vector<std::size_t>& rows, OutcomeFamily family,
                                       const std::vector<double>& lambdas, const ElasticNetOptions& opt) {
  const Standardized st(x, rows);
  const std::vector<double> yr = gather(y, rows);
  double beta0 = initial_intercept(yr, family);
  std::vector<double> beta(x.size(), 0.0);
  std::vector<PathPoint> path;
  path.reserve(lambdas.size());
  for (double lambda : lambdas) {
    const std::size_t sweeps = solve_standardized(st, yr, family, lambda, opt.alpha, beta0, beta, opt);
    path.push_back(to_original_scale(st, lambda, beta0, beta, sweeps));
  }
  return path;
}

inline double held_out_loss(const PathPoint& pt, const std::vector<std::vector<double>>& x,
                            const std::vector<double>& y, std::size_t row, OutcomeFamily family) {
  double eta = pt.intercept;
  for (std::size_t j = 0; j < x.size(); ++j) eta += pt.beta[j] * x[j][row];
  if (family == OutcomeFamily::continuous) return (y[row] - eta) * (y[row] - eta);
  const double pr = clamp_prob(1.0 / (1.0 + std::exp(-eta)));
  return -2.0 * (y[row] * std::log(pr) + (1.0 - y[row]) * std::log(1.0 - pr));
}

}  // namespace detail

/// Single cold-start solve at a fixed lambda.
inline PathPoint solve_at(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                          OutcomeFamily family, double lambda, const ElasticNetOptions& opt = {}) {
  detail::check_inputs(x, y, family, opt.alpha);
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  return detail::fit_path(x, y, rows, family, {lambda}, opt).front();
}

/// Smallest lambda whose solution is entirely zero.
inline double lambda_max(const std::vector<std::vector<double>>& x, const std::vector<double>& y, double alpha) {
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  const detail::Standardized st(x, rows);
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double best = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (st.constant[j]) continue;
    double g = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) g += st.xs[j][i] * (y[i] - ybar);
    best = std::max(best, std::fabs(g) / static_cast<double>(y.size()));
  }
  return best / std::max(alpha, 1e-3);
}

/// Elastic-net path with K-fold cross-validated lambda (minimum mean deviance).
/// Folds are a pure function of (n, seed).
inline ElasticNetFit fit_elastic_net(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                     OutcomeFamily family, std::uint64_t seed, const ElasticNetOptions& opt = {}) {
  detail::check_inputs(x, y, family, opt.alpha);
  const std::size_t n = y.size(), p = x.size();
  if (n <= opt.folds) throw InputError("elastic net needs more rows than cross-validation folds");
  if (opt.folds < 2) throw InputError("elastic net needs at least 2 folds");

  ElasticNetFit fit;
  fit.family = family;
  fit.alpha = opt.alpha;

  const double lmax = lambda_max(x, y, opt.alpha);
  if (lmax > 0.0) {
    const double ratio = opt.lambda_min_ratio.value_or(p > n ? 1e-2 : 1e-3);
    const std::size_t m = std::max<std::size_t>(opt.nlambda, 2);
    for (std::size_t l = 0; l < m; ++l)
      fit.lambdas.push_back(lmax * std::pow(ratio, static_cast<double>(l) / static_cast<double>(m - 1)));
  } else {
    fit.lambdas.push_back(1.0);  // nothing to select: constant outcome or covariates
  }

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  fit.path = detail::fit_path(x, y, all, family, fit.lambdas, opt);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng fold_rng(seed, 0x5eedf01dULL);
  fold_rng.shuffle(perm);
  fit.fold_ids.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) fit.fold_ids[perm[i]] = static_cast<int>(i % opt.folds);

  const std::size_t nl = fit.lambdas.size();
  std::vector<std::vector<double>> fold_err(opt.folds, std::vector<double>(nl, 0.0));
  std::vector<double> fold_n(opt.folds, 0.0);
  ElasticNetOptions cv_opt = opt;
  cv_opt.objective_trace = nullptr;
  parallel_for(opt.folds, opt.threads, [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (fit.fold_ids[i] == static_cast<int>(f) ? test : train).push_back(i);
    const auto path = detail::fit_path(x, y, train, family, fit.lambdas, cv_opt);
    for (std::size_t l = 0; l < nl; ++l) {
      double s = 0.0;
      for (std::size_t i : test) s += detail::held_out_loss(path[l], x, y, i, family);
      fold_err[f][l] = s / static_cast<double>(test.size());
    }
    fold_n[f] = static_cast<double>(test.size());
  });

  fit.cv_mean.assign(nl, 0.0);
  fit.cv_se.assign(nl, 0.0);
  const double total = static_cast<double>(n);
  for (std::size_t l = 0; l < nl; ++l) {
    double m = 0.0;
    for (std::size_t f = 0; f < opt.folds; ++f) m += fold_n[f] * fold_err[f][l];
    m /= total;
    double v = 0.0;
    for (std::size_t f = 0; f < opt.folds; ++f) v += fold_n[f] * (fold_err[f][l] - m) * (fold_err[f][l] - m);
    v /= total;
    fit.cv_mean[l] = m;
    fit.cv_se[l] = std::sqrt(v / static_cast<double>(opt.folds - 1));
  }
  fit.chosen = static_cast<std::size_t>(std::min_element(fit.cv_mean.begin(), fit.cv_mean.end()) - fit.cv_mean.begin());
  return fit;
}

/// Largest violation of the elastic-net KKT conditions on the standardized scale.
inline double kkt_residual(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                           OutcomeFamily family, double alpha, const PathPoint& pt) {
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  const detail::Standardized st(x, rows);
  const std::size_t n = y.size();
  // Intercept on the standardized scale.
  double b0 = pt.intercept;
  for (std::size_t j = 0; j < x.size(); ++j) b0 += pt.beta[j] * st.mean[j];
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = b0;
    for (std::size_t j = 0; j < x.size(); ++j) eta += st.xs[j][i] * pt.beta_standardized[j];
    resid[i] = family == OutcomeFamily::continuous ? y[i] - eta : y[i] - 1.0 / (1.0 + std::exp(-eta));
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (st.constant[j]) continue;
    double g = 0.0;
    for (std::size_t i = 0; i < n; ++i) g += st.xs[j][i] * resid[i];
    g /= static_cast<double>(n);
    const double b = pt.beta_standardized[j];
    const double lam = pt.lambda;
    const double viol = b != 0.0 ? std::fabs(g - lam * (1.0 - alpha) * b - lam * alpha * (b > 0 ? 1.0 : -1.0))
                                 : std::max(0.0, std::fabs(g) - lam * alpha);
    worst = std::max(worst, viol);
  }
  return worst;
}

/// Filter step outcome: the fit plus the retained covariates.
struct FilterResult {
  ElasticNetFit fit;
  FilteredView view;
};

/// Regresses y on the covariates only (treatment excluded) and keeps columns
/// with a nonzero coefficient at the cross-validated lambda.
inline FilterResult filter_covariates(const TrialDataset& ds, OutcomeFamily family, std::uint64_t seed,
                                      const ElasticNetOptions& opt = {}) {
  require_valid(ds);
  FilterResult res{fit_elastic_net(ds.x, ds.y, family, seed, opt), FilteredView{ds, {}}};
  const auto& beta = res.fit.chosen_point().beta;
  for (std::size_t j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) res.view.kept_columns.push_back(j);
  return res;
}

}  // namespace prism::enet
