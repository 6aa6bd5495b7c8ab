#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prism/ctree.hpp"
#include "prism/data.hpp"
#include "prism/enet.hpp"
#include "prism/error.hpp"
#include "prism/forest.hpp"
#include "prism/mob.hpp"
#include "prism/param.hpp"
#include "prism/rng.hpp"
#include "prism/tree.hpp"

namespace prism {

inline constexpr const char* kVersion = "0.1.0";

enum class Configuration { mob, prism_a, prism_b, custom };
enum class SubmodChoice { mob_observed, ctree_ple };
enum class ParamChoice { ple_bayes, glm };

inline const char* to_string(Configuration c) {
  switch (c) {
    case Configuration::mob: return "MOB";
    case Configuration::prism_a: return "PRISM_A";
    case Configuration::prism_b: return "PRISM_B";
    default: return "custom";
  }
}
inline const char* to_string(SubmodChoice s) { return s == SubmodChoice::mob_observed ? "mob" : "ctree"; }
inline const char* to_string(ParamChoice p) { return p == ParamChoice::ple_bayes ? "ple_bayes" : "glm"; }

struct PipelineConfig {
  Configuration configuration = Configuration::prism_a;
  OutcomeFamily family = OutcomeFamily::continuous;
  bool filter = true;
  bool ple = true;
  SubmodChoice submod = SubmodChoice::mob_observed;
  ParamChoice param = ParamChoice::ple_bayes;
  tree::TreeSettings tree;
  enet::ElasticNetOptions enet;
  forest::PleOptions forest;
  param::BayesConfig bayes;
  std::size_t bootstrap_b = 0;
  std::uint64_t seed = 1;

  static PipelineConfig mob(OutcomeFamily family) {
    PipelineConfig c;
    c.configuration = Configuration::mob;
    c.family = family;
    c.filter = false;
    c.ple = false;
    c.param = ParamChoice::glm;
    return c;
  }
  static PipelineConfig prism_a(OutcomeFamily family) {
    PipelineConfig c;
    c.family = family;
    return c;
  }
  static PipelineConfig prism_b(OutcomeFamily family) {
    PipelineConfig c = prism_a(family);
    c.configuration = Configuration::prism_b;
    c.submod = SubmodChoice::ctree_ple;
    return c;
  }

  /// Consistency of the stage choices; throws InputError.
  void check() const {
    if (submod == SubmodChoice::ctree_ple && !ple) throw InputError("CTREE on PLEs requires the PLE stage");
    if (param == ParamChoice::ple_bayes && !ple) throw InputError("PLE/Bayes estimation requires the PLE stage");
    if (!(tree.alpha > 0.0 && tree.alpha < 1.0)) throw InputError("tree alpha must lie in (0,1)");
    if (tree.max_depth < 0) throw InputError("max_depth must be >= 0");
    if (!(tree.min_node_fraction > 0.0 && tree.min_node_fraction <= 1.0))
      throw InputError("min_node_fraction must lie in (0,1]");
    if (!(bayes.alpha > 0.0 && bayes.alpha < 1.0)) throw InputError("alpha must lie in (0,1)");
    if (bayes.gamma < 0.0) throw InputError("gamma must be positive");
    if (forest.num_trees == 0) throw InputError("num_trees must be >= 1");
  }

  /// Canonical text form used for hashing and the run manifest.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "configuration=" << to_string(configuration) << ";family=" << to_string(family) << ";filter=" << filter
       << ";ple=" << ple << ";submod=" << to_string(submod) << ";param=" << to_string(param)
       << ";tree.alpha=" << tree.alpha << ";tree.max_depth=" << tree.max_depth
       << ";tree.min_node_fraction=" << tree.min_node_fraction << ";tree.min_node=" << tree.min_node.value_or(0)
       << ";tree.trim=" << tree.trim << ";enet.alpha=" << enet.alpha << ";enet.nlambda=" << enet.nlambda
       << ";enet.folds=" << enet.folds << ";forest.num_trees=" << forest.num_trees
       << ";forest.mtry=" << forest.mtry.value_or(0) << ";forest.min_node_fraction=" << forest.min_node_fraction
       << ";bayes.gamma=" << bayes.gamma << ";bayes.alpha=" << bayes.alpha << ";thresholds=";
    for (double c : bayes.thresholds) os << c << ',';
    os << ";bootstrap_b=" << bootstrap_b << ";seed=" << seed;
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }
};

struct FilterSummary {
  bool applied = false;
  double lambda = 0.0;
  std::vector<std::string> names;
  std::vector<double> coefficients;  // chosen-lambda coefficients, original scale
  std::vector<bool> kept;
  std::vector<std::size_t> kept_columns;
};

struct RunManifest {
  std::string version = kVersion;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t input_hash = 0;
  std::size_t n = 0;
  std::size_t p = 0;
};

struct AnalysisReport {
  PipelineConfig config;
  FilterSummary filter;
  std::optional<forest::PleTable> ple;
  tree::SubgroupTree tree;
  std::vector<tree::SubgroupRule> rules;
  std::vector<int> assignment;
  std::vector<param::SubgroupEstimate> estimates;  // k = 0 (overall) .. K
  RunManifest manifest;

  int num_subgroups() const { return tree.num_subgroups(); }
  const param::SubgroupEstimate& overall() const { return estimates.front(); }
  const param::SubgroupEstimate& subgroup(int k) const { return estimates.at(static_cast<std::size_t>(k)); }
};

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const InputError& e) {
    throw StageError(stage, e.what(), false);
  } catch (const NumericError& e) {
    throw StageError(stage, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), true);
  }
}

inline std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return CounterRng(seed).derive(stage).key(); }

/// Steps 3 and 4 given the retained covariates and (optionally) the PLEs.
inline void finish_pipeline(const TrialDataset& ds, AnalysisReport& rep) {
  const PipelineConfig& cfg = rep.config;
  const FilteredView fv{ds, rep.filter.kept_columns};
  rep.tree = run_stage("submod", [&] {
    if (cfg.submod == SubmodChoice::ctree_ple) return tree::fit_ctree_on_ple(rep.ple->theta_hat, fv, cfg.tree);
    return tree::fit_mob(fv, cfg.family, cfg.tree);
  });
  rep.rules = tree::extract_rules(rep.tree);
  rep.assignment = tree::assign_subgroups(rep.tree, ds);
  const int K = rep.tree.num_subgroups();
  rep.estimates = run_stage("param", [&] {
    if (cfg.param == ParamChoice::ple_bayes)
      return param::ple_bayes_estimates(ds, *rep.ple, rep.assignment, K, cfg.bayes);
    std::vector<std::size_t> all(ds.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<param::SubgroupEstimate> out{param::glm_arm_difference(ds, all, cfg.family, cfg.bayes)};
    for (auto& e : param::glm_within_subgroups(ds, rep.assignment, K, cfg.family, cfg.bayes)) out.push_back(std::move(e));
    return out;
  });
  for (int k = 1; k <= K; ++k) rep.estimates[static_cast<std::size_t>(k)].rule = rep.rules[static_cast<std::size_t>(k - 1)].text();
}

inline AnalysisReport start_pipeline(const TrialDataset& ds, const PipelineConfig& cfg) {
  run_stage("config", [&] { cfg.check(); });
  run_stage("data", [&] {
    require_valid(ds);
    if (cfg.family == OutcomeFamily::binary && !ds.outcome_is_binary())
      throw InputError("binary outcome family requires y in {0,1}");
  });
  AnalysisReport rep;
  rep.config = cfg;
  rep.manifest.seed = cfg.seed;
  rep.manifest.config_hash = cfg.hash();
  rep.manifest.input_hash = dataset_hash(ds);
  rep.manifest.n = ds.n();
  rep.manifest.p = ds.p();

  rep.filter.names = ds.covariate_names;
  rep.filter.applied = cfg.filter;
  if (cfg.filter) {
    const auto res = run_stage("filter", [&] { return enet::filter_covariates(ds, cfg.family, stage_seed(cfg.seed, 1), cfg.enet); });
    rep.filter.lambda = res.fit.chosen_lambda();
    rep.filter.coefficients = res.fit.chosen_point().beta;
    rep.filter.kept_columns = res.view.kept_columns;
  } else {
    rep.filter.kept_columns = FilteredView::all(ds).kept_columns;
  }
  rep.filter.kept.assign(ds.p(), false);
  for (auto j : rep.filter.kept_columns) rep.filter.kept[j] = true;

  if (cfg.ple) {
    const FilteredView fv{ds, rep.filter.kept_columns};
    rep.ple = run_stage("ple", [&] { return forest::counterfactual_ple(ds, fv, stage_seed(cfg.seed, 2), cfg.forest); });
  }
  return rep;
}

}  // namespace detail

/// Filter, PLE, subgroup model and estimation as selected by the configuration.
inline AnalysisReport run_pipeline(const TrialDataset& ds, const PipelineConfig& cfg) {
  AnalysisReport rep = detail::start_pipeline(ds, cfg);
  detail::finish_pipeline(ds, rep);
  return rep;
}

/// Reruns only the subgroup and estimation steps of `base` under another
/// configuration that shares its filter and PLE settings.
inline AnalysisReport rerun_from_ple(const TrialDataset& ds, const AnalysisReport& base, const PipelineConfig& cfg) {
  if (cfg.filter != base.config.filter || cfg.ple != base.config.ple)
    throw InputError("configurations do not share the filter and PLE steps");
  AnalysisReport rep;
  rep.config = cfg;
  rep.filter = base.filter;
  rep.ple = base.ple;
  rep.manifest = base.manifest;
  rep.manifest.config_hash = cfg.hash();
  detail::finish_pipeline(ds, rep);
  return rep;
}

}  // namespace prism
