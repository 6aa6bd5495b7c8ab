#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/stats.hpp"
#include "prism/tree.hpp"

namespace prism::tree {

/// Asymptotic p-value of the sup-LM statistic over [trim, 1 - trim] for k
/// parameters, using the closed-form tail approximation
///   P(sup > c) ~ c^{k/2} e^{-c/2} / (2^{k/2} Gamma(k/2)) [(1 - k/c) log(lambda) + 2/c],
/// lambda = (1 - trim)^2 / trim^2. Below c = 2k the approximation is not
/// informative and the p-value is taken as 1.
inline double sup_lm_pvalue(double c, int k, double trim) {
  if (!(c > 2.0 * k)) return 1.0;
  if (!std::isfinite(c)) return 0.0;
  const double lambda = (1.0 - trim) * (1.0 - trim) / (trim * trim);
  const double half = 0.5 * k;
  const double log_prefix = half * std::log(c) - 0.5 * c - half * std::numbers::ln2 - std::lgamma(half);
  const double p = std::exp(log_prefix) * ((1.0 - k / c) * std::log(lambda) + 2.0 / c);
  return std::clamp(p, 0.0, 1.0);
}

namespace detail {

inline double binomial_nll(double s, double n) {
  if (n <= 0.0) return 0.0;
  const double p = s / n;
  double v = 0.0;
  if (s > 0.0) v -= s * std::log(p);
  if (n - s > 0.0) v -= (n - s) * std::log(1.0 - p);
  return v;
}

/// Per-arm sufficient statistics. The node model y ~ 1 + a, by least squares
/// or identity-link binomial likelihood, is fitted by the arm means.
struct ArmStats {
  std::array<double, 2> n{0.0, 0.0};
  std::array<double, 2> s{0.0, 0.0};
  std::array<double, 2> ss{0.0, 0.0};

  void add(double y, int a) {
    n[a] += 1.0;
    s[a] += y;
    ss[a] += y * y;
  }
  bool both_arms() const { return n[0] > 0.0 && n[1] > 0.0; }

  double objective(OutcomeFamily family) const {
    double v = 0.0;
    for (int a = 0; a < 2; ++a) {
      if (n[a] <= 0.0) continue;
      if (family == OutcomeFamily::continuous)
        v += std::max(0.0, ss[a] - s[a] * s[a] / n[a]);
      else
        v += binomial_nll(s[a], n[a]);
    }
    return v;
  }
};

class MobPolicy {
 public:
  MobPolicy(const FilteredView& fv, OutcomeFamily family, double trim)
      : fv_(fv), ds_(fv.base.get()), family_(family), trim_(trim) {}

  double objective(const std::vector<std::size_t>& rows) const { return stats(rows).objective(family_); }

  std::optional<std::string> degenerate(const std::vector<std::size_t>& rows) {
    const ArmStats st = stats(rows);
    if (!st.both_arms()) return "single treatment arm";
    fit_scores(rows, st);
    if (!info_ok_) return "singular score information";
    return std::nullopt;
  }

  CovariateTest test(const std::vector<std::size_t>& rows, std::size_t k, std::size_t min_node) const {
    if (!has_admissible_split(rows, k, min_node)) return {};
    const auto& col = fv_.column(k);
    const double n = static_cast<double>(rows.size());
    if (fv_.kind(k) == CovariateKind::binary) {
      std::array<std::array<double, 2>, 2> level_sum{};
      std::array<double, 2> level_n{0.0, 0.0};
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int l = col[rows[i]] > 0.5 ? 1 : 0;
        level_sum[l][0] += scores_[i][0];
        level_sum[l][1] += scores_[i][1];
        level_n[l] += 1.0;
      }
      if (level_n[0] == 0.0 || level_n[1] == 0.0) return {};
      const double stat = quad(level_sum[0]) / level_n[0] + quad(level_sum[1]) / level_n[1];
      return {stat, stats::chi_squared_sf(stat, 2.0)};
    }
    // Cumulative score process in covariate order, evaluated at value changes.
    std::vector<std::size_t> pos(rows.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) { return col[rows[a]] < col[rows[b]]; });
    const auto lo = static_cast<std::size_t>(std::ceil(trim_ * n - 1e-9));
    const std::size_t hi = rows.size() - lo;
    std::array<double, 2> cum{0.0, 0.0};
    double best = 0.0;
    for (std::size_t i = 0; i + 1 < pos.size(); ++i) {
      cum[0] += scores_[pos[i]][0];
      cum[1] += scores_[pos[i]][1];
      const std::size_t count = i + 1;
      if (count < lo || count > hi) continue;
      if (!(col[rows[pos[i]]] < col[rows[pos[i + 1]]])) continue;
      const double t = static_cast<double>(count) / n;
      best = std::max(best, quad(cum) / n / (t * (1.0 - t)));
    }
    return {best, sup_lm_pvalue(best, 2, trim_)};
  }

  std::optional<SplitChoice> split(const std::vector<std::size_t>& rows, std::size_t k, std::size_t min_node) const {
    const auto& col = fv_.column(k);
    const ArmStats total = stats(rows);
    if (fv_.kind(k) == CovariateKind::binary) {
      ArmStats left;
      for (auto r : rows)
        if (col[r] <= 0.5) left.add(ds_.y[r], ds_.a[r]);
      const ArmStats right = subtract(total, left);
      if (!admissible(left, right, min_node)) return std::nullopt;
      return SplitChoice{0.5, true, left.objective(family_) + right.objective(family_)};
    }
    const auto ord = detail::order_by(col, rows);
    ArmStats left;
    std::optional<SplitChoice> best;
    for (std::size_t i = 0; i + 1 < ord.size(); ++i) {
      left.add(ds_.y[ord[i]], ds_.a[ord[i]]);
      if (!(col[ord[i]] < col[ord[i + 1]])) continue;
      const ArmStats right = subtract(total, left);
      if (!admissible(left, right, min_node)) continue;
      const double obj = left.objective(family_) + right.objective(family_);
      if (!best || obj < best->child_objective)
        best = SplitChoice{0.5 * (col[ord[i]] + col[ord[i + 1]]), false, obj};
    }
    return best;
  }

 private:
  ArmStats stats(const std::vector<std::size_t>& rows) const {
    ArmStats st;
    for (auto r : rows) st.add(ds_.y[r], ds_.a[r]);
    return st;
  }

  static ArmStats subtract(const ArmStats& total, const ArmStats& part) {
    ArmStats out;
    for (int a = 0; a < 2; ++a) {
      out.n[a] = total.n[a] - part.n[a];
      out.s[a] = total.s[a] - part.s[a];
      out.ss[a] = total.ss[a] - part.ss[a];
    }
    return out;
  }

  static bool admissible(const ArmStats& l, const ArmStats& r, std::size_t min_node) {
    const double m = static_cast<double>(min_node);
    return l.n[0] + l.n[1] >= m && r.n[0] + r.n[1] >= m && l.both_arms() && r.both_arms();
  }

  bool has_admissible_split(const std::vector<std::size_t>& rows, std::size_t k, std::size_t min_node) const {
    return split(rows, k, min_node).has_value();
  }

  /// Score contributions of the node fit and the inverse of their outer-product information.
  void fit_scores(const std::vector<std::size_t>& rows, const ArmStats& st) {
    const std::array<double, 2> mu{st.s[0] / st.n[0], st.s[1] / st.n[1]};
    if (family_ == OutcomeFamily::binary)
      for (double m : mu)
        if (m < 0.0 || m > 1.0) throw NumericError("identity-link binomial fit outside [0,1]");
    scores_.assign(rows.size(), {0.0, 0.0});
    double j00 = 0.0, j01 = 0.0, j11 = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int a = ds_.a[rows[i]];
      const double y = ds_.y[rows[i]];
      const double m = mu[a];
      double g = y - m;
      if (family_ == OutcomeFamily::binary) g = (m > 0.0 && m < 1.0) ? g / (m * (1.0 - m)) : 0.0;
      scores_[i] = {g, g * a};
      j00 += g * g;
      j01 += g * g * a;
      j11 += g * g * a;
    }
    const double n = static_cast<double>(rows.size());
    j00 /= n;
    j01 /= n;
    j11 /= n;
    const double det = j00 * j11 - j01 * j01;
    const double scale = (j00 + j11) * (j00 + j11);
    info_ok_ = j00 > 0.0 && j11 > 0.0 && det > 1e-12 * scale;
    if (info_ok_) jinv_ = {j11 / det, -j01 / det, j00 / det};
  }

  double quad(const std::array<double, 2>& s) const {
    return jinv_[0] * s[0] * s[0] + 2.0 * jinv_[1] * s[0] * s[1] + jinv_[2] * s[1] * s[1];
  }

  const FilteredView& fv_;
  const TrialDataset& ds_;
  OutcomeFamily family_;
  double trim_;
  std::vector<std::array<double, 2>> scores_;
  std::array<double, 3> jinv_{0.0, 0.0, 0.0};
  bool info_ok_ = false;
};

}  // namespace detail

/// Model-based recursive partitioning of y ~ 1 + a on the observed outcomes,
/// splitting where the node parameters are unstable with respect to a covariate.
inline SubgroupTree fit_mob(const FilteredView& fv, OutcomeFamily family, const TreeSettings& settings = {}) {
  detail::MobPolicy policy(fv, family, settings.trim);
  SubgroupTree tree = detail::grow_tree(fv, settings, TreeSource::mob_observed, policy);
  check_invariants(tree);
  return tree;
}

}  // namespace prism::tree
