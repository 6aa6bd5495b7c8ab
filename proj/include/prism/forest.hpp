#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/parallel.hpp"
#include "prism/rng.hpp"

namespace prism::forest {

/// Feature columns, each of the same length.
using Columns = std::vector<std::span<const double>>;

struct ForestParams {
  std::size_t num_trees = 500;
  std::optional<std::size_t> mtry;  // default max(q/3, 1)
  std::size_t min_node_size = 1;    // minimum rows per leaf
  bool bootstrap = true;
  std::size_t threads = 0;

  std::size_t resolved_mtry(std::size_t q) const {
    return std::clamp<std::size_t>(mtry.value_or(std::max<std::size_t>(q / 3, 1)), 1, q);
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double split = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  std::size_t count = 0;

  bool leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const Columns& x, std::size_t row) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].leaf()) {
      const auto& nd = nodes[static_cast<std::size_t>(k)];
      k = x[static_cast<std::size_t>(nd.feature)][row] <= nd.split ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); }));
  }
};

struct ForestModel {
  std::vector<RegressionTree> trees;
  std::vector<std::uint64_t> tree_seeds;
  ForestParams params;
  std::size_t mtry = 1;

  double predict(const Columns& x, std::size_t row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x, row);
    return s / static_cast<double>(trees.size());
  }

  std::vector<double> predict_all(const Columns& x) const {
    const std::size_t n = x.empty() ? 0 : x.front().size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = predict(x, i);
    return out;
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Columns& x, std::span<const double> y, std::size_t mtry, std::size_t min_node, CounterRng rng)
      : x_(x), y_(y), mtry_(mtry), min_node_(std::max<std::size_t>(min_node, 1)), rng_(rng) {}

  RegressionTree build(std::vector<std::size_t> rows) {
    RegressionTree tree;
    grow(tree, std::move(rows));
    return tree;
  }

 private:
  int grow(RegressionTree& tree, std::vector<std::size_t> rows) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += y_[r];
    const std::size_t size = rows.size();
    tree.nodes.back().count = size;
    tree.nodes.back().value = sum / static_cast<double>(size);
    if (size < 2 * min_node_) return id;

    double lo = y_[rows.front()], hi = lo;
    for (auto r : rows) {
      lo = std::min(lo, y_[r]);
      hi = std::max(hi, y_[r]);
    }
    if (lo == hi) return id;

    std::vector<std::size_t> feats(x_.size());
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t k = 0; k < mtry_; ++k) {
      const auto j = k + static_cast<std::size_t>(rng_.below(feats.size() - k));
      std::swap(feats[k], feats[j]);
    }

    const double parent = sum * sum / static_cast<double>(size);
    double best_gain = 0.0;
    int best_feature = -1;
    double best_split = 0.0;
    std::vector<std::pair<double, double>> xy(size);
    for (std::size_t k = 0; k < mtry_; ++k) {
      const std::size_t f = feats[k];
      for (std::size_t i = 0; i < size; ++i) xy[i] = {x_[f][rows[i]], y_[rows[i]]};
      std::sort(xy.begin(), xy.end());
      double left = 0.0;
      for (std::size_t i = 1; i < size; ++i) {
        left += xy[i - 1].second;
        if (i < min_node_ || size - i < min_node_) continue;
        if (!(xy[i - 1].first < xy[i].first)) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(i) +
                            right * right / static_cast<double>(size - i) - parent;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_split = 0.5 * (xy[i - 1].first + xy[i].first);
        }
      }
    }
    if (best_feature < 0 || best_gain <= 1e-12 * (1.0 + std::fabs(parent))) return id;

    std::vector<std::size_t> lrows, rrows;
    for (auto r : rows) (x_[static_cast<std::size_t>(best_feature)][r] <= best_split ? lrows : rrows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(tree, std::move(lrows));
    const int r = grow(tree, std::move(rrows));
    auto& nd = tree.nodes[static_cast<std::size_t>(id)];
    nd.feature = best_feature;
    nd.split = best_split;
    nd.left = l;
    nd.right = r;
    return id;
  }

  const Columns& x_;
  std::span<const double> y_;
  std::size_t mtry_;
  std::size_t min_node_;
  CounterRng rng_;
};

}  // namespace detail

/// Bagged CART regression trees with variance-reduction splits. Every leaf
/// holds at least min_node_size (bootstrap) rows; leaves predict their mean.
inline ForestModel fit_regression_forest(const Columns& x, std::span<const double> y, const ForestParams& params,
                                         std::uint64_t seed) {
  if (x.empty()) throw InputError("regression forest needs at least one covariate");
  const std::size_t n = y.size();
  if (n == 0) throw InputError("regression forest needs training rows");
  for (const auto& col : x)
    if (col.size() != n) throw InputError("regression forest covariate length mismatch");
  if (params.num_trees == 0) throw InputError("regression forest needs at least one tree");

  ForestModel model;
  model.params = params;
  model.mtry = params.resolved_mtry(x.size());
  model.trees.resize(params.num_trees);
  model.tree_seeds.resize(params.num_trees);
  const CounterRng root(seed);
  for (std::size_t t = 0; t < params.num_trees; ++t) model.tree_seeds[t] = root.derive(t).key();

  parallel_for(params.num_trees, params.threads, [&](std::size_t t) {
    CounterRng rng(model.tree_seeds[t]);
    std::vector<std::size_t> rows(n);
    if (params.bootstrap) {
      for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    detail::TreeBuilder builder(x, y, model.mtry, params.min_node_size, rng.derive(1));
    model.trees[t] = builder.build(std::move(rows));
  });
  return model;
}

/// Patient-level estimates: arm-specific fits and their difference.
struct PleTable {
  std::vector<double> mu0_hat;
  std::vector<double> mu1_hat;
  std::vector<double> theta_hat;
  std::vector<double> pi_hat;

  std::size_t size() const { return theta_hat.size(); }
};

struct PleOptions {
  std::size_t num_trees = 500;
  std::optional<std::size_t> mtry;
  double min_node_fraction = 0.10;  // of the total trial size
  std::size_t threads = 0;
};

/// Marginal arm-1 rate, the propensity for a randomized trial.
inline std::vector<double> marginal_propensity(const TrialDataset& ds) {
  return std::vector<double>(ds.n(), static_cast<double>(ds.arm_size(1)) / static_cast<double>(ds.n()));
}

/// Separate forests per arm, each predicting every patient; with no retained
/// covariates the PLE is the constant difference in arm means.
inline PleTable counterfactual_ple(const TrialDataset& ds, const FilteredView& fv, std::uint64_t seed,
                                   const PleOptions& opt = {}) {
  const std::size_t n = ds.n();
  if (ds.arm_size(0) == 0 || ds.arm_size(1) == 0) throw InputError("counterfactual PLE needs both arms");
  PleTable ple;
  ple.pi_hat = marginal_propensity(ds);

  if (fv.q() == 0) {
    std::array<double, 2> sum{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) sum[static_cast<std::size_t>(ds.a[i])] += ds.y[i];
    const double m0 = sum[0] / static_cast<double>(ds.arm_size(0));
    const double m1 = sum[1] / static_cast<double>(ds.arm_size(1));
    ple.mu0_hat.assign(n, m0);
    ple.mu1_hat.assign(n, m1);
    ple.theta_hat.assign(n, m1 - m0);
    return ple;
  }

  Columns all;
  for (std::size_t k = 0; k < fv.q(); ++k) all.emplace_back(fv.column(k));

  ForestParams params;
  params.num_trees = opt.num_trees;
  params.mtry = opt.mtry;
  params.min_node_size = static_cast<std::size_t>(std::ceil(opt.min_node_fraction * static_cast<double>(n) - 1e-9));
  params.threads = opt.threads;

  const CounterRng root(seed);
  auto fit_arm = [&](int arm) {
    std::vector<std::vector<double>> cols(fv.q());
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      if (ds.a[i] != arm) continue;
      y.push_back(ds.y[i]);
      for (std::size_t k = 0; k < fv.q(); ++k) cols[k].push_back(fv.column(k)[i]);
    }
    Columns train(cols.begin(), cols.end());
    const ForestModel model = fit_regression_forest(train, y, params, root.derive(static_cast<std::uint64_t>(arm)).key());
    return model.predict_all(all);
  };
  ple.mu0_hat = fit_arm(0);
  ple.mu1_hat = fit_arm(1);
  ple.theta_hat.resize(n);
  for (std::size_t i = 0; i < n; ++i) ple.theta_hat[i] = ple.mu1_hat[i] - ple.mu0_hat[i];
  return ple;
}

}  // namespace prism::forest
