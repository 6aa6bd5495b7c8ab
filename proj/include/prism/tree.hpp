#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"

namespace prism::tree {

enum class TreeSource { mob_observed, ctree_ple };

inline const char* to_string(TreeSource s) { return s == TreeSource::mob_observed ? "MOB-observed" : "CTREE-on-PLE"; }

struct TreeSettings {
  double alpha = 0.10;
  int max_depth = 4;
  double min_node_fraction = 0.10;
  std::optional<std::size_t> min_node;  // absolute override
  double trim = 0.10;                   // sup-LM trimming (MOB only)

  std::size_t resolved_min_node(std::size_t n) const {
    if (min_node) return std::max<std::size_t>(*min_node, 1);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(min_node_fraction * static_cast<double>(n) - 1e-9)));
  }
};

struct TreeNode {
  int id = 0;
  int depth = 0;
  int parent = -1;
  bool terminal = true;
  // Split description (internal nodes): left child is x <= cutpoint.
  std::size_t covariate = 0;
  std::string covariate_name;
  bool binary_split = false;
  double cutpoint = 0.0;
  int left = -1;
  int right = -1;
  // Terminal nodes.
  int subgroup = 0;
  std::vector<std::size_t> rows;
  // Test record for this node.
  double p_value = std::numeric_limits<double>::quiet_NaN();  // Bonferroni-adjusted minimum
  double statistic = std::numeric_limits<double>::quiet_NaN();
  double objective = 0.0;
  std::string stop_reason;
};

/// Rule-based partition of the covariate space. Terminal nodes are numbered
/// k = 1..K in depth-first, left-to-right order.
struct SubgroupTree {
  std::vector<TreeNode> nodes;
  TreeSettings settings;
  TreeSource source = TreeSource::mob_observed;
  std::size_t n = 0;
  std::size_t min_node = 1;

  int num_subgroups() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& t) { return t.terminal; }));
  }

  const TreeNode& terminal(int k) const {
    for (const auto& t : nodes)
      if (t.terminal && t.subgroup == k) return t;
    throw InputError("no subgroup " + std::to_string(k));
  }

  int depth() const {
    int d = 0;
    for (const auto& t : nodes) d = std::max(d, t.depth);
    return d;
  }

  /// Names of covariates used in any split.
  std::set<std::string> split_variables() const {
    std::set<std::string> out;
    for (const auto& t : nodes)
      if (!t.terminal) out.insert(t.covariate_name);
    return out;
  }

  /// Routes one dataset row to its subgroup index.
  int route(const TrialDataset& ds, std::size_t row) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].terminal) {
      const auto& nd = nodes[static_cast<std::size_t>(k)];
      k = ds.x[nd.covariate][row] <= nd.cutpoint ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].subgroup;
  }
};

/// Subgroup index (1..K) for every row; rows must carry every split covariate
/// at the same column positions as the training data.
inline std::vector<int> assign_subgroups(const SubgroupTree& tree, const TrialDataset& ds) {
  std::vector<int> k(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) k[i] = tree.route(ds, i);
  return k;
}

enum class Relation { le, gt, eq0, eq1 };

struct SplitRule {
  std::size_t covariate;
  std::string name;
  Relation relation;
  double threshold;
};

/// Simplified bound set on one covariate within a rule.
struct Condition {
  std::size_t covariate = 0;
  std::string name;
  bool binary = false;
  int level = 0;
  std::optional<double> lower;  // x > lower
  std::optional<double> upper;  // x <= upper

  bool matches(double v) const {
    if (binary) return level == 0 ? v <= 0.5 : v > 0.5;
    if (lower && !(v > *lower)) return false;
    if (upper && !(v <= *upper)) return false;
    return true;
  }
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

inline std::string to_string(const Condition& c) {
  if (c.binary) return c.name + "=" + std::to_string(c.level);
  if (c.lower && c.upper) return format_number(*c.lower) + "<" + c.name + "<=" + format_number(*c.upper);
  if (c.upper) return c.name + "<=" + format_number(*c.upper);
  return c.name + ">" + format_number(*c.lower);
}

/// Conjunction describing one terminal node.
struct SubgroupRule {
  int subgroup = 1;
  std::vector<Condition> conditions;
  std::vector<SplitRule> path;

  bool matches(const TrialDataset& ds, std::size_t row) const {
    return std::all_of(conditions.begin(), conditions.end(),
                       [&](const Condition& c) { return c.matches(ds.x[c.covariate][row]); });
  }

  RowPredicate predicate() const {
    return [rule = *this](const TrialDataset& ds, std::size_t row) { return rule.matches(ds, row); };
  }

  std::string text() const {
    if (conditions.empty()) return "Overall";
    std::string s;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      if (i) s += " & ";
      s += to_string(conditions[i]);
    }
    return s;
  }

  /// Exact key (full precision) for memoization.
  std::string key() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& c : conditions) {
      os << c.covariate << ':';
      if (c.binary) os << '=' << c.level;
      if (c.lower) os << '>' << *c.lower;
      if (c.upper) os << "<=" << *c.upper;
      os << ';';
    }
    return os.str();
  }
};

/// One conjunction per terminal node, with repeated bounds on a covariate merged.
inline std::vector<SubgroupRule> extract_rules(const SubgroupTree& tree) {
  std::vector<SubgroupRule> rules;
  struct Frame {
    int node;
    SubgroupRule rule;
  };
  std::vector<Frame> stack{{0, {}}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    const auto& nd = tree.nodes[static_cast<std::size_t>(f.node)];
    if (nd.terminal) {
      f.rule.subgroup = nd.subgroup;
      rules.push_back(std::move(f.rule));
      continue;
    }
    for (int side = 1; side >= 0; --side) {  // push right first so left pops first
      SubgroupRule r = f.rule;
      Relation rel = nd.binary_split ? (side == 0 ? Relation::eq0 : Relation::eq1)
                                     : (side == 0 ? Relation::le : Relation::gt);
      r.path.push_back({nd.covariate, nd.covariate_name, rel, nd.cutpoint});
      auto it = std::find_if(r.conditions.begin(), r.conditions.end(),
                             [&](const Condition& c) { return c.covariate == nd.covariate; });
      if (it == r.conditions.end()) {
        Condition c;
        c.covariate = nd.covariate;
        c.name = nd.covariate_name;
        c.binary = nd.binary_split;
        r.conditions.push_back(c);
        it = std::prev(r.conditions.end());
      }
      if (nd.binary_split) {
        it->level = side;
      } else if (side == 0) {
        it->upper = it->upper ? std::min(*it->upper, nd.cutpoint) : nd.cutpoint;
      } else {
        it->lower = it->lower ? std::max(*it->lower, nd.cutpoint) : nd.cutpoint;
      }
      stack.push_back({side == 0 ? nd.left : nd.right, std::move(r)});
    }
  }
  std::sort(rules.begin(), rules.end(), [](const SubgroupRule& a, const SubgroupRule& b) { return a.subgroup < b.subgroup; });
  return rules;
}

/// A chosen split for one node.
struct SplitChoice {
  double cutpoint = 0.0;
  bool binary = false;
  double child_objective = 0.0;
};

/// Result of testing one candidate covariate in a node.
struct CovariateTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

namespace detail {

/// Recursive significance-test-driven partitioning shared by MOB and CTREE.
/// The policy supplies node objective, degeneracy check, per-covariate test
/// and cutpoint search; the builder handles stopping, Bonferroni adjustment
/// and bookkeeping.
template <typename Policy>
SubgroupTree grow_tree(const FilteredView& fv, const TreeSettings& settings, TreeSource source, Policy& policy) {
  const TrialDataset& ds = fv.base.get();
  SubgroupTree tree;
  tree.settings = settings;
  tree.source = source;
  tree.n = ds.n();
  tree.min_node = settings.resolved_min_node(ds.n());
  const std::size_t min_node = tree.min_node;
  const std::size_t q = fv.q();

  auto build = [&](auto& self, std::vector<std::size_t> rows, int depth, int parent) -> int {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    {
      auto& nd = tree.nodes.back();
      nd.id = id;
      nd.depth = depth;
      nd.parent = parent;
      nd.objective = policy.objective(rows);
    }
    auto stop = [&](std::string reason) {
      auto& nd = tree.nodes[static_cast<std::size_t>(id)];
      nd.stop_reason = std::move(reason);
      nd.rows = std::move(rows);
      return id;
    };
    if (q == 0) return stop("no covariates");
    if (depth >= settings.max_depth) return stop("max depth");
    if (rows.size() < 2 * min_node) return stop("node too small");
    if (auto reason = policy.degenerate(rows)) return stop(*reason);

    std::size_t best = 0;
    double best_p = 2.0, best_stat = 0.0;
    for (std::size_t k = 0; k < q; ++k) {
      const CovariateTest t = policy.test(rows, k, min_node);
      const double adj = std::min(1.0, static_cast<double>(q) * t.p_value);
      if (adj < best_p) {
        best_p = adj;
        best = k;
        best_stat = t.statistic;
      }
    }
    tree.nodes[static_cast<std::size_t>(id)].p_value = best_p;
    tree.nodes[static_cast<std::size_t>(id)].statistic = best_stat;
    if (!(best_p < settings.alpha)) return stop("not significant");

    const std::optional<SplitChoice> split = policy.split(rows, best, min_node);
    if (!split) return stop("no admissible split");
    const double parent_obj = tree.nodes[static_cast<std::size_t>(id)].objective;
    if (!(split->child_objective < parent_obj - 1e-12 * std::max(1.0, std::fabs(parent_obj))))
      return stop("no objective decrease");

    const std::size_t col = fv.kept_columns[best];
    std::vector<std::size_t> left, right;
    for (auto r : rows) (ds.x[col][r] <= split->cutpoint ? left : right).push_back(r);
    if (left.size() < min_node || right.size() < min_node)
      throw NumericError("internal error: split violates minimum node size");
    rows.clear();
    const int l = self(self, std::move(left), depth + 1, id);
    const int r = self(self, std::move(right), depth + 1, id);
    auto& nd = tree.nodes[static_cast<std::size_t>(id)];
    nd.terminal = false;
    nd.covariate = col;
    nd.covariate_name = fv.name(best);
    nd.binary_split = split->binary;
    nd.cutpoint = split->cutpoint;
    nd.left = l;
    nd.right = r;
    return id;
  };

  std::vector<std::size_t> all(ds.n());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  build(build, std::move(all), 0, -1);

  // Number terminals depth-first, left to right.
  int k = 0;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    auto& nd = tree.nodes[static_cast<std::size_t>(id)];
    if (nd.terminal) {
      nd.subgroup = ++k;
    } else {
      stack.push_back(nd.right);
      stack.push_back(nd.left);
    }
  }
  return tree;
}

/// Sorted (value, row) order for a covariate within a node.
inline std::vector<std::size_t> order_by(const std::vector<double>& col, const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> ord = rows;
  std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
  return ord;
}

}  // namespace detail

/// Checks the partition, size and depth invariants; throws on violation.
inline void check_invariants(const SubgroupTree& tree) {
  std::vector<int> seen(tree.n, 0);
  for (const auto& nd : tree.nodes) {
    if (nd.depth > tree.settings.max_depth) throw NumericError("tree exceeds max depth");
    if (!nd.terminal) continue;
    if (nd.rows.size() < tree.min_node && tree.nodes.size() > 1) throw NumericError("terminal node below min size");
    for (auto r : nd.rows) ++seen[r];
  }
  for (int c : seen)
    if (c != 1) throw NumericError("terminal nodes do not partition the rows");
}

}  // namespace prism::tree
