#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/stats.hpp"
#include "prism/tree.hpp"

namespace prism::tree {

namespace detail {

/// Conditional-inference splitting of a real response h (the PLEs) using the
/// permutation moments of the linear statistic sum g(x_i) h_i.
class CtreePolicy {
 public:
  CtreePolicy(const FilteredView& fv, const std::vector<double>& response) : fv_(fv), h_(response) {}

  double objective(const std::vector<std::size_t>& rows) const {
    double s = 0.0, ss = 0.0;
    for (auto r : rows) {
      s += h_[r];
      ss += h_[r] * h_[r];
    }
    return std::max(0.0, ss - s * s / static_cast<double>(rows.size()));
  }

  std::optional<std::string> degenerate(const std::vector<std::size_t>& rows) const {
    double lo = h_[rows.front()], hi = lo;
    for (auto r : rows) {
      lo = std::min(lo, h_[r]);
      hi = std::max(hi, h_[r]);
    }
    if (hi - lo <= 1e-12 * (1.0 + std::fabs(hi))) return "constant response";
    return std::nullopt;
  }

  CovariateTest test(const std::vector<std::size_t>& rows, std::size_t k, std::size_t min_node) const {
    if (!split(rows, k, min_node)) return {};
    const auto& col = fv_.column(k);
    const double n = static_cast<double>(rows.size());
    double sg = 0.0, sgg = 0.0, sh = 0.0, T = 0.0;
    for (auto r : rows) {
      sg += col[r];
      sgg += col[r] * col[r];
      sh += h_[r];
      T += col[r] * h_[r];
    }
    const double hbar = sh / n;
    double vh = 0.0;
    for (auto r : rows) vh += (h_[r] - hbar) * (h_[r] - hbar);
    vh /= n;
    const double mu = sg * hbar;
    const double var = vh / (n - 1.0) * (n * sgg - sg * sg);
    if (!(var > 0.0)) return {};
    const double c = (T - mu) * (T - mu) / var;
    return {c, stats::chi_squared_sf(c, 1.0)};
  }

  std::optional<SplitChoice> split(const std::vector<std::size_t>& rows, std::size_t k, std::size_t min_node) const {
    const auto& col = fv_.column(k);
    const double n = static_cast<double>(rows.size());
    double sh = 0.0, shh = 0.0;
    for (auto r : rows) {
      sh += h_[r];
      shh += h_[r] * h_[r];
    }
    const double vh = std::max(0.0, shh / n - (sh / n) * (sh / n));
    auto evaluate = [&](double nl, double sl, double ssl) -> std::pair<double, double> {
      // Standardized two-sample statistic and the summed child sum of squares.
      const double mu = nl * sh / n;
      const double var = vh / (n - 1.0) * (n * nl - nl * nl);
      const double stat = var > 0.0 ? (sl - mu) * (sl - mu) / var : 0.0;
      const double nr = n - nl, sr = sh - sl, ssr = shh - ssl;
      const double obj = std::max(0.0, ssl - sl * sl / nl) + std::max(0.0, ssr - sr * sr / nr);
      return {stat, obj};
    };
    if (fv_.kind(k) == CovariateKind::binary) {
      double nl = 0.0, sl = 0.0, ssl = 0.0;
      for (auto r : rows)
        if (col[r] <= 0.5) {
          nl += 1.0;
          sl += h_[r];
          ssl += h_[r] * h_[r];
        }
      if (nl < static_cast<double>(min_node) || n - nl < static_cast<double>(min_node)) return std::nullopt;
      return SplitChoice{0.5, true, evaluate(nl, sl, ssl).second};
    }
    const auto ord = detail::order_by(col, rows);
    double nl = 0.0, sl = 0.0, ssl = 0.0, best_stat = -1.0;
    std::optional<SplitChoice> best;
    for (std::size_t i = 0; i + 1 < ord.size(); ++i) {
      nl += 1.0;
      sl += h_[ord[i]];
      ssl += h_[ord[i]] * h_[ord[i]];
      if (!(col[ord[i]] < col[ord[i + 1]])) continue;
      if (nl < static_cast<double>(min_node) || n - nl < static_cast<double>(min_node)) continue;
      const auto [stat, obj] = evaluate(nl, sl, ssl);
      if (stat > best_stat) {
        best_stat = stat;
        best = SplitChoice{0.5 * (col[ord[i]] + col[ord[i + 1]]), false, obj};
      }
    }
    return best;
  }

 private:
  const FilteredView& fv_;
  const std::vector<double>& h_;
};

}  // namespace detail

/// Conditional inference tree on the patient-level estimates.
inline SubgroupTree fit_ctree_on_ple(const std::vector<double>& theta_hat, const FilteredView& fv,
                                     const TreeSettings& settings = {}) {
  if (theta_hat.size() != fv.base.get().n()) throw InputError("PLE length does not match the dataset");
  detail::CtreePolicy policy(fv, theta_hat);
  SubgroupTree tree = detail::grow_tree(fv, settings, TreeSource::ctree_ple, policy);
  check_invariants(tree);
  return tree;
}

}  // namespace prism::tree
