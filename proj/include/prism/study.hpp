#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/parallel.hpp"
#include "prism/param.hpp"
#include "prism/pipeline.hpp"
#include "prism/rng.hpp"
#include "prism/sim.hpp"
#include "prism/stats.hpp"

namespace prism::study {

enum class Method { mob, prism_a, prism_b, oracle, standard_practice };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::mob: return "MOB";
    case Method::prism_a: return "PRISM_A";
    case Method::prism_b: return "PRISM_B";
    case Method::oracle: return "Oracle";
    default: return "StandardPractice";
  }
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::mob, Method::prism_a, Method::prism_b, Method::oracle, Method::standard_practice})
    if (s == to_string(m)) return m;
  throw InputError("unknown method '" + s + "'");
}

struct StudyConfig {
  std::vector<sim::SimScenario> scenarios;  // scenario seeds are ignored
  std::vector<Method> methods{Method::mob, Method::prism_a, Method::prism_b, Method::oracle,
                              Method::standard_practice};
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
  std::vector<double> cutoffs{0.50, 0.80};
  param::Direction benefit_direction = param::Direction::greater;
  double alpha = 0.05;              // CI level for every method
  double standard_practice_alpha = 0.05;
  std::size_t oracle_m = 10000;
  std::size_t num_trees = 500;
  std::size_t threads = 0;

  void check() const {
    if (replicates < 1) throw InputError("study needs at least one replicate");
    if (scenarios.empty()) throw InputError("study needs at least one scenario");
    for (double c : cutoffs)
      if (!(c > 0.0 && c < 1.0)) throw InputError("posterior cutoffs must lie in (0,1)");
    for (const auto& sc : scenarios)
      if (sc.n % 2 != 0 || sc.n < 4) throw InputError("scenario n must be even and >= 4");
  }
};

/// A discovered (or true) subgroup scored against its oracle truth.
struct SubgroupEval {
  int k = 0;
  std::size_t n_k = 0;
  double estimate = param::kNaN;
  double ci_low = param::kNaN;
  double ci_high = param::kNaN;
  double truth = param::kNaN;
  std::string rule;
  bool flagged = false;
};

struct Classification {
  std::optional<double> accuracy;
  std::optional<double> ppv;
  std::optional<double> npv;
  std::size_t assigned_b = 0;
};

struct MethodRecord {
  Method method = Method::prism_a;
  bool failed = false;
  std::string error;
  int num_subgroups = 0;
  std::vector<SubgroupEval> subgroups;
  std::set<std::string> split_variables;
  std::vector<std::string> filter_kept;
  std::vector<std::vector<char>> assigned_b;  // per cutoff, per patient
  std::vector<Classification> classification;  // per cutoff
  double p_value = param::kNaN;                // standard practice
  bool all_b = false;                          // standard practice
  bool nested_cutoffs = true;                  // B(higher cutoff) within B(lower cutoff)
};

struct ReplicateRecord {
  std::size_t scenario = 0;
  std::size_t replicate = 0;
  std::uint64_t data_seed = 0;
  std::vector<MethodRecord> methods;

  const MethodRecord* find(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return &r;
    return nullptr;
  }
};

struct StudyResult {
  StudyConfig config;
  std::vector<ReplicateRecord> records;
};

// ---- metric definitions ----

struct EstimationMetrics {
  double bias_overall = 0.0;
  double bias_abs = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
};

/// Size-weighted bias, absolute bias, squared error and coverage over the
/// subgroups of one fit; flagged subgroups are left out.
inline std::optional<EstimationMetrics> estimation_metrics(const std::vector<SubgroupEval>& sg) {
  double w = 0.0;
  EstimationMetrics m;
  for (const auto& s : sg) {
    if (s.flagged || !std::isfinite(s.estimate) || !std::isfinite(s.truth)) continue;
    const double nk = static_cast<double>(s.n_k);
    const double e = s.estimate - s.truth;
    m.bias_overall += nk * e;
    m.bias_abs += nk * std::fabs(e);
    m.mse += nk * e * e;
    m.coverage += nk * ((s.ci_low <= s.truth && s.truth <= s.ci_high) ? 1.0 : 0.0);
    w += nk;
  }
  if (w == 0.0) return std::nullopt;
  m.bias_overall /= w;
  m.bias_abs /= w;
  m.mse /= w;
  m.coverage /= w;
  return m;
}

struct SelectionRates {
  double predictive = 0.0;
  double prognostic = 0.0;
  double noise = 0.0;
};

inline const std::set<std::string>& predictive_names() {
  static const std::set<std::string> s{"X1", "X2", "X3"};
  return s;
}
inline const std::set<std::string>& prognostic_names() {
  static const std::set<std::string> s{"X5", "X7", "X10"};
  return s;
}

/// Fraction of each variable class appearing in any split (presence counted once).
inline SelectionRates variable_selection_rates(const std::set<std::string>& split_vars, int n_noise) {
  SelectionRates r;
  double noise = 0.0;
  for (const auto& v : split_vars) {
    if (predictive_names().count(v))
      r.predictive += 1.0;
    else if (prognostic_names().count(v))
      r.prognostic += 1.0;
    else
      noise += 1.0;
  }
  r.predictive /= 3.0;
  r.prognostic /= 3.0;
  r.noise = n_noise > 0 ? noise / static_cast<double>(n_noise) : 0.0;
  return r;
}

struct StandardPractice {
  double estimate = param::kNaN;
  double p_value = 1.0;
  bool all_b = false;
};

/// Unadjusted test of y ~ a: two-sample t-test (continuous) or pooled
/// two-proportion z-test (binary); treat everyone with B when p < alpha.
inline StandardPractice standard_practice_assign(const TrialDataset& ds, OutcomeFamily family, double alpha = 0.05) {
  std::vector<std::size_t> all(ds.n());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  StandardPractice sp;
  if (family == OutcomeFamily::continuous) {
    const auto est = param::glm_arm_difference(ds, all, family, {});
    sp.estimate = est.theta_tilde;
    sp.p_value = std::isfinite(est.p_value) ? est.p_value : 1.0;
  } else {
    const double n1 = static_cast<double>(ds.arm_size(1)), n0 = static_cast<double>(ds.arm_size(0));
    double x1 = 0.0, x0 = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) (ds.a[i] ? x1 : x0) += ds.y[i];
    const double pbar = (x1 + x0) / (n1 + n0);
    const double se = std::sqrt(pbar * (1.0 - pbar) * (1.0 / n1 + 1.0 / n0));
    sp.estimate = x1 / n1 - x0 / n0;
    sp.p_value = se > 0.0 ? 2.0 * stats::normal_sf(std::fabs(sp.estimate) / se) : 1.0;
  }
  sp.all_b = sp.p_value < alpha;
  return sp;
}

/// Patient gets B iff the posterior probability of benefit in their subgroup
/// exceeds the cutoff. `estimates` is indexed by subgroup (0 = overall).
inline std::vector<char> prism_assign(const std::vector<param::SubgroupEstimate>& estimates,
                                      std::span<const int> assignment, double cutoff,
                                      param::Direction direction = param::Direction::greater, double c = 0.0) {
  std::vector<char> out(assignment.size(), 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const auto& e = estimates.at(static_cast<std::size_t>(assignment[i]));
    double p = e.probability(c, direction);
    if (std::isnan(p) && std::isfinite(e.posterior_mean) && std::isfinite(e.posterior_var))
      p = param::tail_probability({e.posterior_mean, e.posterior_var}, c, direction);
    out[i] = p > cutoff ? 1 : 0;
  }
  return out;
}

/// Accuracy, PPV (truly benefit among B) and NPV (truly no benefit among A).
inline Classification classification_metrics(std::span<const char> predicted_b, std::span<const char> truth_benefit) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_b.size(); ++i) {
    if (predicted_b[i])
      (truth_benefit[i] ? tp : fp) += 1;
    else
      (truth_benefit[i] ? fn : tn) += 1;
  }
  Classification c;
  const std::size_t n = predicted_b.size();
  c.assigned_b = tp + fp;
  if (n) c.accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
  if (tp + fp) c.ppv = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tn + fn) c.npv = static_cast<double>(tn) / static_cast<double>(tn + fn);
  return c;
}

/// True iff every patient assigned B at the higher cutoff is also B at the lower.
inline bool nested_assignments(const std::vector<double>& cutoffs, const std::vector<std::vector<char>>& assigned) {
  for (std::size_t a = 0; a < cutoffs.size(); ++a)
    for (std::size_t b = 0; b < cutoffs.size(); ++b) {
      if (!(cutoffs[b] > cutoffs[a])) continue;
      for (std::size_t i = 0; i < assigned[a].size(); ++i)
        if (assigned[b][i] && !assigned[a][i]) return false;
    }
  return true;
}

// ---- replicate driver ----

namespace detail {

/// Per-replicate truth oracle with memoized rule effects.
class TruthOracle {
 public:
  TruthOracle(const sim::SimScenario& sc, std::size_t m, CounterRng rng) : pop_(sc, m, rng) {}

  double effect(const std::string& key, const RowPredicate& rule) {
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    const double v = pop_.effect(rule);
    memo_.emplace(key, v);
    return v;
  }

 private:
  sim::OraclePopulation pop_;
  std::map<std::string, double> memo_;
};

inline void score_pipeline(MethodRecord& rec, const AnalysisReport& rep, TruthOracle& oracle,
                           const std::vector<char>& benefit, const StudyConfig& cfg) {
  rec.num_subgroups = rep.num_subgroups();
  rec.split_variables = rep.tree.split_variables();
  for (auto j : rep.filter.kept_columns) rec.filter_kept.push_back(rep.filter.names[j]);
  for (int k = 1; k <= rec.num_subgroups; ++k) {
    const auto& e = rep.subgroup(k);
    const auto& rule = rep.rules[static_cast<std::size_t>(k - 1)];
    SubgroupEval s;
    s.k = k;
    s.n_k = e.n_k;
    s.estimate = e.estimate();
    s.ci_low = e.ci_low;
    s.ci_high = e.ci_high;
    s.flagged = e.flagged;
    s.rule = rule.text();
    s.truth = oracle.effect(rule.key(), rule.predicate());
    rec.subgroups.push_back(std::move(s));
  }
  for (double cut : cfg.cutoffs) {
    rec.assigned_b.push_back(prism_assign(rep.estimates, rep.assignment, cut, cfg.benefit_direction));
    rec.classification.push_back(classification_metrics(rec.assigned_b.back(), benefit));
  }
  rec.nested_cutoffs = nested_assignments(cfg.cutoffs, rec.assigned_b);
}

template <typename Fn>
MethodRecord guarded(Method m, Fn&& fn) {
  MethodRecord rec;
  rec.method = m;
  try {
    fn(rec);
  } catch (const std::exception& e) {
    rec = MethodRecord{};
    rec.method = m;
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

}  // namespace detail

inline PipelineConfig study_pipeline_config(Method m, OutcomeFamily family, const StudyConfig& cfg, std::uint64_t seed) {
  PipelineConfig c = m == Method::mob       ? PipelineConfig::mob(family)
                     : m == Method::prism_b ? PipelineConfig::prism_b(family)
                                            : PipelineConfig::prism_a(family);
  c.seed = seed;
  c.bayes.alpha = cfg.alpha;
  c.forest.num_trees = cfg.num_trees;
  c.forest.threads = 1;
  c.enet.threads = 1;
  return c;
}

/// One simulated trial analysed by every configured method.
inline ReplicateRecord run_replicate(const StudyConfig& cfg, std::size_t scenario, std::size_t replicate) {
  const CounterRng rng = CounterRng(cfg.seed).derive(scenario).derive(replicate);
  sim::SimScenario sc = cfg.scenarios[scenario];
  sc.seed = rng.derive(0).key();
  const TrialDataset ds = sim::generate_trial(sc);
  detail::TruthOracle oracle(sc, cfg.oracle_m, rng.derive(1));
  const std::uint64_t pipeline_seed = rng.derive(2).key();
  const OutcomeFamily family = sc.outcome_family;

  std::vector<char> benefit(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) benefit[i] = sim::true_benefit(ds, i, sc) ? 1 : 0;

  ReplicateRecord out;
  out.scenario = scenario;
  out.replicate = replicate;
  out.data_seed = sc.seed;

  std::optional<AnalysisReport> prism_a;
  for (Method m : cfg.methods) {
    out.methods.push_back(detail::guarded(m, [&](MethodRecord& rec) {
      switch (m) {
        case Method::mob:
        case Method::prism_a:
        case Method::prism_b: {
          const PipelineConfig pc = study_pipeline_config(m, family, cfg, pipeline_seed);
          AnalysisReport rep = (m == Method::prism_b && prism_a) ? rerun_from_ple(ds, *prism_a, pc) : run_pipeline(ds, pc);
          detail::score_pipeline(rec, rep, oracle, benefit, cfg);
          if (m == Method::prism_a) prism_a = std::move(rep);
          break;
        }
        case Method::oracle: {
          const int K = sim::num_true_subgroups(sc);
          std::vector<int> truth_assign(ds.n());
          for (std::size_t i = 0; i < ds.n(); ++i) truth_assign[i] = sim::true_subgroup(ds, i, sc);
          param::BayesConfig bc;
          bc.alpha = cfg.alpha;
          const auto est = param::oracle_estimate(ds, truth_assign, K, family, bc);
          rec.num_subgroups = K;
          for (const auto& e : est) {
            SubgroupEval s;
            s.k = e.k;
            s.n_k = e.n_k;
            s.estimate = e.estimate();
            s.ci_low = e.ci_low;
            s.ci_high = e.ci_high;
            s.flagged = e.flagged;
            s.rule = "true subgroup " + std::to_string(e.k);
            const int k = e.k;
            s.truth = oracle.effect("true:" + std::to_string(k), [&sc, k](const TrialDataset& d, std::size_t i) {
              return sim::true_subgroup(d, i, sc) == k;
            });
            rec.subgroups.push_back(std::move(s));
          }
          break;
        }
        case Method::standard_practice: {
          const StandardPractice sp = standard_practice_assign(ds, family, cfg.standard_practice_alpha);
          rec.p_value = sp.p_value;
          rec.all_b = sp.all_b;
          rec.num_subgroups = 1;
          const std::vector<char> assigned(ds.n(), sp.all_b ? 1 : 0);
          for (std::size_t c = 0; c < cfg.cutoffs.size(); ++c) {
            rec.assigned_b.push_back(assigned);
            rec.classification.push_back(classification_metrics(assigned, benefit));
          }
          break;
        }
      }
    }));
  }
  return out;
}

/// Runs every (scenario, replicate) pair; replicates execute in parallel with
/// seeds derived from (base seed, scenario, replicate).
inline StudyResult run_study(const StudyConfig& cfg) {
  cfg.check();
  StudyResult res;
  res.config = cfg;
  const std::size_t total = cfg.scenarios.size() * cfg.replicates;
  res.records.resize(total);
  parallel_for(total, cfg.threads, [&](std::size_t t) {
    res.records[t] = run_replicate(cfg, t / cfg.replicates, t % cfg.replicates);
  });
  return res;
}

// ---- aggregation ----

struct MetricSummary {
  std::string scenario;
  std::string method;
  std::string metric;
  double value = param::kNaN;
  double mc_se = param::kNaN;
  std::size_t count = 0;     // replicates contributing
  std::size_t excluded = 0;  // replicates without a defined value
};

namespace detail {

struct Accumulator {
  std::vector<double> values;
  std::size_t excluded = 0;

  void add(std::optional<double> v) {
    if (v && std::isfinite(*v))
      values.push_back(*v);
    else
      ++excluded;
  }

  MetricSummary summary(std::string scenario, std::string method, std::string metric) const {
    MetricSummary s{std::move(scenario), std::move(method), std::move(metric)};
    s.count = values.size();
    s.excluded = excluded;
    if (!values.empty()) s.value = stats::mean(values);
    if (values.size() >= 2) s.mc_se = stats::sample_sd(values) / std::sqrt(static_cast<double>(values.size()));
    return s;
  }
};

inline std::string cutoff_label(double c) {
  std::ostringstream os;
  os << c;
  return os.str();
}

}  // namespace detail

/// Per-scenario, per-method averages over replicates with Monte Carlo SEs.
inline std::vector<MetricSummary> summarize(const StudyResult& res) {
  const StudyConfig& cfg = res.config;
  std::vector<MetricSummary> out;
  for (std::size_t s = 0; s < cfg.scenarios.size(); ++s) {
    const std::string label = cfg.scenarios[s].label();
    std::vector<const ReplicateRecord*> recs;
    for (const auto& r : res.records)
      if (r.scenario == s) recs.push_back(&r);

    std::map<Method, std::vector<std::optional<EstimationMetrics>>> est_by_method;
    for (Method m : cfg.methods) {
      std::map<std::string, detail::Accumulator> acc;
      std::vector<std::string> order;
      auto add = [&](const std::string& name, std::optional<double> v) {
        if (!acc.count(name)) order.push_back(name);
        acc[name].add(v);
      };
      std::size_t failures = 0;
      for (const ReplicateRecord* r : recs) {
        const MethodRecord* mr = r->find(m);
        if (!mr) continue;
        if (mr->failed) {
          ++failures;
          est_by_method[m].push_back(std::nullopt);
          continue;
        }
        const auto em = estimation_metrics(mr->subgroups);
        est_by_method[m].push_back(em);
        if (m != Method::standard_practice) {
          add("bias_overall", em ? std::optional(em->bias_overall) : std::nullopt);
          add("bias_abs", em ? std::optional(em->bias_abs) : std::nullopt);
          add("mse", em ? std::optional(em->mse) : std::nullopt);
          add("coverage", em ? std::optional(em->coverage) : std::nullopt);
          add("num_subgroups", static_cast<double>(mr->num_subgroups));
        }
        if (m == Method::mob || m == Method::prism_a || m == Method::prism_b) {
          const SelectionRates sr = variable_selection_rates(mr->split_variables, cfg.scenarios[s].n_noise);
          add("split_rate", mr->num_subgroups > 1 ? 1.0 : 0.0);
          add("predictive_selected", sr.predictive);
          add("prognostic_selected", sr.prognostic);
          add("noise_selected", sr.noise);
        }
        if (m == Method::standard_practice) add("all_b_rate", mr->all_b ? 1.0 : 0.0);
        for (std::size_t c = 0; c < mr->classification.size(); ++c) {
          const std::string suffix = m == Method::standard_practice ? "" : "@" + detail::cutoff_label(cfg.cutoffs[c]);
          if (m == Method::standard_practice && c > 0) break;
          add("accuracy" + suffix, mr->classification[c].accuracy);
          add("ppv" + suffix, mr->classification[c].ppv);
          add("npv" + suffix, mr->classification[c].npv);
        }
        if (!mr->assigned_b.empty()) add("nested_cutoffs", mr->nested_cutoffs ? 1.0 : 0.0);
      }
      for (const auto& name : order) out.push_back(acc[name].summary(label, to_string(m), name));
      MetricSummary f{label, to_string(m), "failures"};
      f.value = static_cast<double>(failures);
      f.count = recs.size();
      out.push_back(f);
    }

    // Relative efficiency MSE(MOB) / MSE(method) over replicates where both are defined.
    if (est_by_method.count(Method::mob)) {
      const auto& mob = est_by_method[Method::mob];
      for (Method m : cfg.methods) {
        if (m == Method::standard_practice) continue;
        const auto& other = est_by_method[m];
        std::vector<double> a, b;
        for (std::size_t i = 0; i < std::min(mob.size(), other.size()); ++i)
          if (mob[i] && other[i]) {
            a.push_back(mob[i]->mse);
            b.push_back(other[i]->mse);
          }
        MetricSummary r{label, to_string(m), "rel_eff_vs_mob"};
        r.count = a.size();
        r.excluded = other.size() - a.size();
        if (!a.empty()) {
          const double ma = stats::mean(a), mb = stats::mean(b);
          r.value = ma / mb;
          if (a.size() >= 2) {
            double va = 0.0, vb = 0.0, cab = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
              va += (a[i] - ma) * (a[i] - ma);
              vb += (b[i] - mb) * (b[i] - mb);
              cab += (a[i] - ma) * (b[i] - mb);
            }
            const double d = static_cast<double>(a.size() - 1) * static_cast<double>(a.size());
            va /= d;
            vb /= d;
            cab /= d;
            const double rel = va / (ma * ma) + vb / (mb * mb) - 2.0 * cab / (ma * mb);
            r.mc_se = std::fabs(r.value) * std::sqrt(std::max(0.0, rel));
          }
        }
        out.push_back(r);
      }
    }
  }
  return out;
}

inline const MetricSummary* find_metric(const std::vector<MetricSummary>& rows, const std::string& scenario,
                                        const std::string& method, const std::string& metric) {
  for (const auto& r : rows)
    if (r.scenario == scenario && r.method == method && r.metric == metric) return &r;
  return nullptr;
}

/// Tidy table: one row per scenario x method x metric.
inline void write_tidy_csv(const std::vector<MetricSummary>& rows, std::ostream& os) {
  os << "scenario,method,metric,value,mc_se,count,excluded\n";
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.method << ',' << r.metric << ',';
    if (std::isfinite(r.value)) os << prism::detail::format_double(r.value);
    os << ',';
    if (std::isfinite(r.mc_se)) os << prism::detail::format_double(r.mc_se);
    os << ',' << r.count << ',' << r.excluded << '\n';
  }
}

}  // namespace prism::study
