#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/bootstrap.hpp"
#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/param.hpp"
#include "prism/pipeline.hpp"
#include "prism/study.hpp"
#include "prism/tree.hpp"

namespace prism::report {

using nlohmann::json;

inline constexpr const char* kReportSchema = "prism.report/1";
inline constexpr const char* kBootstrapSchema = "prism.bootstrap/1";
inline constexpr const char* kStudySchema = "prism.study/1";

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---- configuration ----

inline OutcomeFamily parse_family(const std::string& s) {
  if (s == "continuous") return OutcomeFamily::continuous;
  if (s == "binary") return OutcomeFamily::binary;
  throw InputError("unknown outcome family '" + s + "'");
}

inline Configuration parse_configuration(const std::string& s) {
  for (Configuration c : {Configuration::mob, Configuration::prism_a, Configuration::prism_b, Configuration::custom})
    if (s == to_string(c)) return c;
  throw InputError("unknown configuration '" + s + "'");
}

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["configuration"] = to_string(c.configuration);
  j["family"] = to_string(c.family);
  j["filter"] = c.filter;
  j["ple"] = c.ple;
  j["submod"] = to_string(c.submod);
  j["param"] = to_string(c.param);
  j["tree"] = {{"alpha", c.tree.alpha},
               {"max_depth", c.tree.max_depth},
               {"min_node_fraction", c.tree.min_node_fraction},
               {"trim", c.tree.trim}};
  if (c.tree.min_node) j["tree"]["min_node"] = *c.tree.min_node;
  j["enet"] = {{"alpha", c.enet.alpha}, {"nlambda", c.enet.nlambda}, {"folds", c.enet.folds}};
  j["forest"] = {{"num_trees", c.forest.num_trees}, {"min_node_fraction", c.forest.min_node_fraction}};
  if (c.forest.mtry) j["forest"]["mtry"] = *c.forest.mtry;
  j["bayes"] = {{"gamma", c.bayes.gamma}, {"alpha", c.bayes.alpha}};
  j["thresholds"] = c.bayes.thresholds;
  j["bootstrap_b"] = c.bootstrap_b;
  j["seed"] = c.seed;
  return j;
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw InputError("unknown key '" + k + "' in " + where);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError("bad value for '" + std::string(key) + "' in " + where);
  }
}

}  // namespace detail

/// Builds a configuration from its JSON form. The named configuration
/// supplies the defaults; remaining keys override individual settings.
inline PipelineConfig config_from_json(const json& j) {
  detail::check_keys(j,
                     {"configuration", "family", "filter", "ple", "submod", "param", "tree", "enet", "forest", "bayes",
                      "thresholds", "bootstrap_b", "seed", "data"},
                     "config");
  const OutcomeFamily family = j.contains("family") ? parse_family(detail::get<std::string>(j, "family", "config"))
                                                    : OutcomeFamily::continuous;
  const Configuration conf = j.contains("configuration")
                                 ? parse_configuration(detail::get<std::string>(j, "configuration", "config"))
                                 : Configuration::prism_a;
  PipelineConfig c = conf == Configuration::mob       ? PipelineConfig::mob(family)
                     : conf == Configuration::prism_b ? PipelineConfig::prism_b(family)
                                                      : PipelineConfig::prism_a(family);
  c.configuration = conf;
  if (j.contains("filter")) c.filter = detail::get<bool>(j, "filter", "config");
  if (j.contains("ple")) c.ple = detail::get<bool>(j, "ple", "config");
  if (j.contains("submod")) {
    const auto s = detail::get<std::string>(j, "submod", "config");
    if (s == "mob")
      c.submod = SubmodChoice::mob_observed;
    else if (s == "ctree")
      c.submod = SubmodChoice::ctree_ple;
    else
      throw InputError("unknown submod '" + s + "'");
  }
  if (j.contains("param")) {
    const auto s = detail::get<std::string>(j, "param", "config");
    if (s == "ple_bayes")
      c.param = ParamChoice::ple_bayes;
    else if (s == "glm")
      c.param = ParamChoice::glm;
    else
      throw InputError("unknown param '" + s + "'");
  }
  if (j.contains("tree")) {
    const json& t = j["tree"];
    detail::check_keys(t, {"alpha", "max_depth", "min_node_fraction", "min_node", "trim"}, "tree");
    if (t.contains("alpha")) c.tree.alpha = detail::get<double>(t, "alpha", "tree");
    if (t.contains("max_depth")) c.tree.max_depth = detail::get<int>(t, "max_depth", "tree");
    if (t.contains("min_node_fraction")) c.tree.min_node_fraction = detail::get<double>(t, "min_node_fraction", "tree");
    if (t.contains("min_node")) c.tree.min_node = detail::get<std::size_t>(t, "min_node", "tree");
    if (t.contains("trim")) c.tree.trim = detail::get<double>(t, "trim", "tree");
  }
  if (j.contains("enet")) {
    const json& e = j["enet"];
    detail::check_keys(e, {"alpha", "nlambda", "folds"}, "enet");
    if (e.contains("alpha")) c.enet.alpha = detail::get<double>(e, "alpha", "enet");
    if (e.contains("nlambda")) c.enet.nlambda = detail::get<std::size_t>(e, "nlambda", "enet");
    if (e.contains("folds")) c.enet.folds = detail::get<std::size_t>(e, "folds", "enet");
  }
  if (j.contains("forest")) {
    const json& f = j["forest"];
    detail::check_keys(f, {"num_trees", "mtry", "min_node_fraction"}, "forest");
    if (f.contains("num_trees")) c.forest.num_trees = detail::get<std::size_t>(f, "num_trees", "forest");
    if (f.contains("mtry")) c.forest.mtry = detail::get<std::size_t>(f, "mtry", "forest");
    if (f.contains("min_node_fraction"))
      c.forest.min_node_fraction = detail::get<double>(f, "min_node_fraction", "forest");
  }
  if (j.contains("bayes")) {
    const json& b = j["bayes"];
    detail::check_keys(b, {"gamma", "alpha"}, "bayes");
    if (b.contains("gamma")) c.bayes.gamma = detail::get<double>(b, "gamma", "bayes");
    if (b.contains("alpha")) c.bayes.alpha = detail::get<double>(b, "alpha", "bayes");
  }
  if (j.contains("thresholds")) c.bayes.thresholds = detail::get<std::vector<double>>(j, "thresholds", "config");
  if (j.contains("bootstrap_b")) c.bootstrap_b = detail::get<std::size_t>(j, "bootstrap_b", "config");
  if (j.contains("seed")) c.seed = detail::get<std::uint64_t>(j, "seed", "config");
  c.check();
  return c;
}

// ---- analysis report ----

inline json estimate_to_json(const param::SubgroupEstimate& e) {
  json j;
  j["k"] = e.k;
  j["rule"] = e.rule;
  j["n"] = e.n_k;
  j["arms"] = json::array();
  for (int a = 0; a < 2; ++a)
    j["arms"].push_back({{"arm", a}, {"n", e.arm_n[static_cast<std::size_t>(a)]}, {"mean", number(e.arm_mean[static_cast<std::size_t>(a)])}});
  j["estimate"] = number(e.estimate());
  j["theta_tilde"] = number(e.theta_tilde);
  j["se"] = number(e.se);
  j["ci"] = {number(e.ci_low), number(e.ci_high)};
  j["naive_ci"] = {number(e.naive_ci_low), number(e.naive_ci_high)};
  j["posterior"] = {{"mean", number(e.posterior_mean)}, {"var", number(e.posterior_var)}};
  j["p_value"] = number(e.p_value);
  j["flagged"] = e.flagged;
  j["probabilities"] = json::array();
  for (const auto& p : e.probabilities)
    j["probabilities"].push_back({{"threshold", p.threshold}, {"direction", param::to_string(p.direction)}, {"probability", number(p.probability)}});
  return j;
}

inline json tree_to_json(const tree::SubgroupTree& t, const std::vector<tree::SubgroupRule>& rules) {
  json j;
  j["source"] = tree::to_string(t.source);
  j["settings"] = {{"alpha", t.settings.alpha}, {"max_depth", t.settings.max_depth}, {"min_node", t.min_node}};
  j["num_subgroups"] = t.num_subgroups();
  j["nodes"] = json::array();
  for (const auto& nd : t.nodes) {
    json n{{"id", nd.id}, {"depth", nd.depth}, {"parent", nd.parent}, {"terminal", nd.terminal},
           {"p_value", number(nd.p_value)}, {"statistic", number(nd.statistic)}};
    if (nd.terminal) {
      n["subgroup"] = nd.subgroup;
      n["n"] = nd.rows.size();
      n["stop_reason"] = nd.stop_reason;
    } else {
      n["covariate"] = nd.covariate_name;
      n["binary"] = nd.binary_split;
      n["cutpoint"] = nd.cutpoint;
      n["left"] = nd.left;
      n["right"] = nd.right;
    }
    j["nodes"].push_back(std::move(n));
  }
  j["rules"] = json::array();
  for (const auto& r : rules) j["rules"].push_back({{"subgroup", r.subgroup}, {"rule", r.text()}});
  return j;
}

inline json manifest_to_json(const RunManifest& m, const PipelineConfig& cfg) {
  return {{"tool", "prism"},       {"version", m.version},        {"seed", m.seed}, {"config_hash", hex(m.config_hash)},
          {"input_hash", hex(m.input_hash)}, {"n", m.n}, {"p", m.p}, {"config", config_to_json(cfg)}};
}

inline json report_to_json(const AnalysisReport& r) {
  json j;
  j["schema"] = kReportSchema;
  j["manifest"] = manifest_to_json(r.manifest, r.config);
  json f;
  f["applied"] = r.filter.applied;
  f["lambda"] = number(r.filter.lambda);
  f["covariates"] = json::array();
  for (std::size_t c = 0; c < r.filter.names.size(); ++c) {
    json e{{"name", r.filter.names[c]}, {"kept", static_cast<bool>(r.filter.kept[c])}};
    e["coefficient"] = c < r.filter.coefficients.size() ? number(r.filter.coefficients[c]) : json(nullptr);
    f["covariates"].push_back(std::move(e));
  }
  j["filter"] = std::move(f);
  j["tree"] = tree_to_json(r.tree, r.rules);
  j["overall"] = estimate_to_json(r.overall());
  j["subgroups"] = json::array();
  for (std::size_t k = 1; k < r.estimates.size(); ++k) j["subgroups"].push_back(estimate_to_json(r.estimates[k]));
  return j;
}

namespace detail {

struct SchemaCheck {
  std::vector<std::string> errors;

  const json* field(const json& obj, const std::string& path, const char* key, json::value_t type,
                    bool nullable = false) {
    if (!obj.is_object() || !obj.contains(key)) {
      errors.push_back(path + "." + key + ": missing");
      return nullptr;
    }
    const json& v = obj[key];
    if (nullable && v.is_null()) return &v;
    const bool ok = type == json::value_t::number_float ? v.is_number()
                    : type == json::value_t::number_unsigned ? v.is_number_unsigned() ||
                                                                   (v.is_number_integer() && v.get<long long>() >= 0)
                    : type == json::value_t::number_integer ? v.is_number_integer()
                                                            : v.type() == type;
    if (!ok) {
      errors.push_back(path + "." + key + ": wrong type");
      return nullptr;
    }
    return &v;
  }

  void estimate(const json& e, const std::string& path) {
    using vt = json::value_t;
    field(e, path, "k", vt::number_integer);
    field(e, path, "rule", vt::string);
    field(e, path, "n", vt::number_unsigned);
    if (const json* arms = field(e, path, "arms", vt::array)) {
      if (arms->size() != 2) errors.push_back(path + ".arms: expected 2 entries");
      for (std::size_t a = 0; a < arms->size(); ++a) {
        const std::string p = path + ".arms[" + std::to_string(a) + "]";
        field((*arms)[a], p, "arm", vt::number_integer);
        field((*arms)[a], p, "n", vt::number_unsigned);
        field((*arms)[a], p, "mean", vt::number_float, true);
      }
    }
    field(e, path, "estimate", vt::number_float, true);
    field(e, path, "theta_tilde", vt::number_float, true);
    field(e, path, "se", vt::number_float, true);
    for (const char* key : {"ci", "naive_ci"})
      if (const json* ci = field(e, path, key, vt::array))
        if (ci->size() != 2) errors.push_back(path + "." + key + ": expected 2 entries");
    if (const json* post = field(e, path, "posterior", vt::object)) {
      field(*post, path + ".posterior", "mean", vt::number_float, true);
      field(*post, path + ".posterior", "var", vt::number_float, true);
    }
    field(e, path, "p_value", vt::number_float, true);
    field(e, path, "flagged", vt::boolean);
    if (const json* probs = field(e, path, "probabilities", vt::array))
      for (std::size_t i = 0; i < probs->size(); ++i) {
        const std::string p = path + ".probabilities[" + std::to_string(i) + "]";
        field((*probs)[i], p, "threshold", vt::number_float);
        if (const json* d = field((*probs)[i], p, "direction", vt::string))
          if (*d != "less" && *d != "greater") errors.push_back(p + ".direction: must be less or greater");
        field((*probs)[i], p, "probability", vt::number_float, true);
      }
  }
};

}  // namespace detail

/// Structural validation of a serialized analysis report; empty when valid.
inline std::vector<std::string> validate_report_json(const json& j) {
  using vt = json::value_t;
  detail::SchemaCheck chk;
  if (const json* s = chk.field(j, "$", "schema", vt::string))
    if (*s != kReportSchema) chk.errors.push_back("$.schema: unsupported version");
  if (const json* m = chk.field(j, "$", "manifest", vt::object)) {
    chk.field(*m, "$.manifest", "tool", vt::string);
    chk.field(*m, "$.manifest", "version", vt::string);
    chk.field(*m, "$.manifest", "seed", vt::number_unsigned);
    chk.field(*m, "$.manifest", "config_hash", vt::string);
    chk.field(*m, "$.manifest", "input_hash", vt::string);
    chk.field(*m, "$.manifest", "n", vt::number_unsigned);
    chk.field(*m, "$.manifest", "p", vt::number_unsigned);
    chk.field(*m, "$.manifest", "config", vt::object);
  }
  if (const json* f = chk.field(j, "$", "filter", vt::object)) {
    chk.field(*f, "$.filter", "applied", vt::boolean);
    chk.field(*f, "$.filter", "lambda", vt::number_float, true);
    if (const json* cov = chk.field(*f, "$.filter", "covariates", vt::array))
      for (std::size_t i = 0; i < cov->size(); ++i) {
        const std::string p = "$.filter.covariates[" + std::to_string(i) + "]";
        chk.field((*cov)[i], p, "name", vt::string);
        chk.field((*cov)[i], p, "kept", vt::boolean);
        chk.field((*cov)[i], p, "coefficient", vt::number_float, true);
      }
  }
  std::size_t K = 0;
  if (const json* t = chk.field(j, "$", "tree", vt::object)) {
    chk.field(*t, "$.tree", "source", vt::string);
    chk.field(*t, "$.tree", "settings", vt::object);
    if (const json* k = chk.field(*t, "$.tree", "num_subgroups", vt::number_unsigned)) K = k->get<std::size_t>();
    if (const json* nodes = chk.field(*t, "$.tree", "nodes", vt::array)) {
      std::size_t terminals = 0;
      for (std::size_t i = 0; i < nodes->size(); ++i) {
        const json& nd = (*nodes)[i];
        const std::string p = "$.tree.nodes[" + std::to_string(i) + "]";
        chk.field(nd, p, "id", vt::number_integer);
        chk.field(nd, p, "depth", vt::number_integer);
        if (const json* term = chk.field(nd, p, "terminal", vt::boolean)) {
          if (term->get<bool>()) {
            ++terminals;
            chk.field(nd, p, "subgroup", vt::number_integer);
            chk.field(nd, p, "n", vt::number_unsigned);
          } else {
            chk.field(nd, p, "covariate", vt::string);
            chk.field(nd, p, "cutpoint", vt::number_float);
            chk.field(nd, p, "left", vt::number_integer);
            chk.field(nd, p, "right", vt::number_integer);
          }
        }
      }
      if (terminals != K) chk.errors.push_back("$.tree: terminal count differs from num_subgroups");
    }
    if (const json* rules = chk.field(*t, "$.tree", "rules", vt::array))
      if (rules->size() != K) chk.errors.push_back("$.tree.rules: expected one rule per subgroup");
  }
  if (const json* o = chk.field(j, "$", "overall", vt::object)) chk.estimate(*o, "$.overall");
  if (const json* s = chk.field(j, "$", "subgroups", vt::array)) {
    if (s->size() != K) chk.errors.push_back("$.subgroups: expected one entry per subgroup");
    for (std::size_t i = 0; i < s->size(); ++i) chk.estimate((*s)[i], "$.subgroups[" + std::to_string(i) + "]");
  }
  return chk.errors;
}

// ---- text rendering ----

inline std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  std::string s = os.str();
  if (s.find_first_not_of("-0.") == std::string::npos) s = std::string(s.front() == '-' ? s.substr(1) : s);
  return s;
}

inline std::string estimate_line(const param::SubgroupEstimate& e) {
  std::ostringstream os;
  os << "n=" << e.n_k << " | a=0: n=" << e.arm_n[0] << " mean=" << fixed(e.arm_mean[0]) << " | a=1: n=" << e.arm_n[1]
     << " mean=" << fixed(e.arm_mean[1]) << " | est=" << fixed(e.estimate()) << " [" << fixed(e.ci_low) << ", "
     << fixed(e.ci_high) << "]";
  if (e.flagged) os << " (flagged)";
  for (const auto& p : e.probabilities)
    os << " | P(theta" << (p.direction == param::Direction::less ? "<" : ">") << tree::format_number(p.threshold)
       << ")=" << fixed(p.probability, 3);
  return os.str();
}

/// Indented rule tree; every terminal line carries its subgroup summary.
inline std::string render_tree_text(const AnalysisReport& r) {
  std::ostringstream os;
  os << "Overall: " << estimate_line(r.overall()) << '\n';
  if (r.num_subgroups() <= 1) return os.str();
  auto walk = [&](auto& self, int id, int indent) -> void {
    const auto& nd = r.tree.nodes[static_cast<std::size_t>(id)];
    const std::string pad(static_cast<std::size_t>(2 * indent), ' ');
    if (nd.terminal) {
      const auto& rule = r.rules[static_cast<std::size_t>(nd.subgroup - 1)];
      os << pad << '[' << nd.subgroup << "] " << rule.text() << ": " << estimate_line(r.subgroup(nd.subgroup)) << '\n';
      return;
    }
    os << pad << "split " << nd.covariate_name
       << (nd.binary_split ? std::string() : " at " + tree::format_number(nd.cutpoint)) << " (p=" << fixed(nd.p_value, 4)
       << ")\n";
    self(self, nd.left, indent + 1);
    self(self, nd.right, indent + 1);
  };
  walk(walk, 0, 0);
  return os.str();
}

// ---- SVG ----

namespace detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

/// Linear map from data values to horizontal SVG coordinates.
struct Axis {
  double lo = -1.0, hi = 1.0, left = 0.0, width = 1.0;

  double to_x(double v) const { return left + (v - lo) / (hi - lo) * width; }
  double to_value(double x) const { return lo + (x - left) / width * (hi - lo); }
};

inline Axis padded_axis(double lo, double hi, double left, double width) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || hi <= lo) {
    const double mid = std::isfinite(lo) ? lo : 0.0;
    lo = mid - 1.0;
    hi = mid + 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad, left, width};
}

}  // namespace detail

/// Forest plot: one row per subgroup plus the overall row, CI whiskers and a
/// posterior density strip shaded by the first threshold.
inline std::string render_forest_svg(const AnalysisReport& r) {
  const double left = 320.0, width = 420.0, row_h = 40.0, top = 40.0;
  const std::size_t rows = r.estimates.size();
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& e : r.estimates)
    for (double v : {e.ci_low, e.ci_high, e.estimate()})
      if (std::isfinite(v)) {
        lo = any ? std::min(lo, v) : v;
        hi = any ? std::max(hi, v) : v;
        any = true;
      }
  for (double c : r.config.bayes.thresholds) {
    lo = any ? std::min(lo, c) : c;
    hi = any ? std::max(hi, c) : c;
    any = true;
  }
  const detail::Axis ax = detail::padded_axis(lo, hi, left, width);
  const double threshold = r.config.bayes.thresholds.empty() ? 0.0 : r.config.bayes.thresholds.front();
  const double height = top + row_h * static_cast<double>(rows) + 50.0;

  std::ostringstream os;
  os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << '\n'
     << R"(<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width=")" << detail::num(left + width + 40.0)
     << "\" height=\"" << detail::num(height) << "\" data-axis-lo=\"" << detail::num(ax.lo) << "\" data-axis-hi=\""
     << detail::num(ax.hi) << "\" data-axis-left=\"" << detail::num(ax.left) << "\" data-axis-width=\""
     << detail::num(ax.width) << "\">\n";
  os << R"(<rect x="0" y="0" width="100%" height="100%" fill="white"/>)" << '\n';
  const double axis_y = top + row_h * static_cast<double>(rows);
  os << "<line class=\"axis\" x1=\"" << detail::num(left) << "\" y1=\"" << detail::num(axis_y) << "\" x2=\""
     << detail::num(left + width) << "\" y2=\"" << detail::num(axis_y) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ax.lo + (ax.hi - ax.lo) * t / 4.0;
    const double x = ax.to_x(v);
    os << "<line x1=\"" << detail::num(x) << "\" y1=\"" << detail::num(axis_y) << "\" x2=\"" << detail::num(x)
       << "\" y2=\"" << detail::num(axis_y + 5.0) << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << detail::num(x) << "\" y=\"" << detail::num(axis_y + 18.0)
       << "\" font-size=\"11\" text-anchor=\"middle\">" << fixed(v, 2) << "</text>\n";
  }
  for (double c : r.config.bayes.thresholds) {
    const double x = ax.to_x(c);
    os << "<line class=\"threshold\" x1=\"" << detail::num(x) << "\" y1=\"" << detail::num(top - 10.0) << "\" x2=\""
       << detail::num(x) << "\" y2=\"" << detail::num(axis_y) << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& e = r.estimates[i];
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    const std::string label = (i == 0 ? std::string("Overall") : "[" + std::to_string(e.k) + "] " + e.rule) +
                              " (n=" + std::to_string(e.n_k) + ")";
    os << "<g class=\"row\" data-k=\"" << e.k << "\">\n";
    os << "<text x=\"10\" y=\"" << detail::num(y + 4.0) << "\" font-size=\"12\">" << detail::escape(label) << "</text>\n";
    if (std::isfinite(e.posterior_mean) && std::isfinite(e.posterior_var) && e.posterior_var > 0.0) {
      const double sd = std::sqrt(e.posterior_var);
      const int slices = 60;
      const double slice_w = width / slices;
      for (int s = 0; s < slices; ++s) {
        const double v = ax.to_value(left + (s + 0.5) * slice_w);
        const double z = (v - e.posterior_mean) / sd;
        const double dens = std::exp(-0.5 * z * z);
        if (dens < 0.01) continue;
        os << "<rect class=\"density\" x=\"" << detail::num(left + s * slice_w) << "\" y=\"" << detail::num(y - 12.0)
           << "\" width=\"" << detail::num(slice_w) << "\" height=\"24\" fill=\""
           << (v < threshold ? "#2ca02c" : "#1f77b4") << "\" fill-opacity=\"" << detail::num(0.35 * dens) << "\"/>\n";
      }
    }
    if (std::isfinite(e.ci_low) && std::isfinite(e.ci_high)) {
      os << "<line class=\"whisker\" data-ci-low=\"" << detail::num(e.ci_low) << "\" data-ci-high=\""
         << detail::num(e.ci_high) << "\" x1=\"" << detail::num(ax.to_x(e.ci_low)) << "\" y1=\"" << detail::num(y)
         << "\" x2=\"" << detail::num(ax.to_x(e.ci_high)) << "\" y2=\"" << detail::num(y)
         << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
    if (std::isfinite(e.estimate())) {
      os << "<circle class=\"estimate\" data-value=\"" << detail::num(e.estimate()) << "\" cx=\""
         << detail::num(ax.to_x(e.estimate())) << "\" cy=\"" << detail::num(y) << "\" r=\"4\" fill=\"black\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Grouped bar charts of study metrics, one panel per metric, bars for each
/// scenario x method. An empty table yields the axes only.
inline std::string render_study_svg(const std::vector<study::MetricSummary>& rows,
                                    const std::vector<std::string>& metrics) {
  const double panel_w = 360.0, panel_h = 220.0, margin = 50.0;
  const std::size_t panels = std::max<std::size_t>(metrics.size(), 1);
  std::ostringstream os;
  os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << '\n'
     << R"(<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width=")"
     << detail::num(margin + panels * (panel_w + margin)) << "\" height=\"" << detail::num(panel_h + 2 * margin + 40.0)
     << "\">\n";
  os << R"(<rect x="0" y="0" width="100%" height="100%" fill="white"/>)" << '\n';
  const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  for (std::size_t p = 0; p < panels; ++p) {
    const double x0 = margin + p * (panel_w + margin), y0 = margin, base = y0 + panel_h;
    os << "<g class=\"panel\">\n";
    os << "<line class=\"axis\" x1=\"" << detail::num(x0) << "\" y1=\"" << detail::num(base) << "\" x2=\""
       << detail::num(x0 + panel_w) << "\" y2=\"" << detail::num(base) << "\" stroke=\"black\"/>\n";
    os << "<line class=\"axis\" x1=\"" << detail::num(x0) << "\" y1=\"" << detail::num(y0) << "\" x2=\""
       << detail::num(x0) << "\" y2=\"" << detail::num(base) << "\" stroke=\"black\"/>\n";
    if (p >= metrics.size()) {
      os << "</g>\n";
      continue;
    }
    os << "<text x=\"" << detail::num(x0 + panel_w / 2) << "\" y=\"" << detail::num(y0 - 15.0)
       << "\" font-size=\"13\" text-anchor=\"middle\">" << detail::escape(metrics[p]) << "</text>\n";
    std::vector<const study::MetricSummary*> sel;
    for (const auto& r : rows)
      if (r.metric == metrics[p] && std::isfinite(r.value)) sel.push_back(&r);
    double lo = 0.0, hi = 0.0;
    for (const auto* r : sel) {
      lo = std::min(lo, r->value);
      hi = std::max(hi, r->value);
    }
    if (hi == lo) hi = lo + 1.0;
    auto to_y = [&](double v) { return base - (v - lo) / (hi - lo) * panel_h; };
    std::map<std::string, std::size_t> method_color;
    const double bar_w = sel.empty() ? 0.0 : panel_w / static_cast<double>(sel.size()) * 0.8;
    for (std::size_t i = 0; i < sel.size(); ++i) {
      const auto& r = *sel[i];
      const std::size_t color = method_color.emplace(r.method, method_color.size()).first->second % 6;
      const double x = x0 + panel_w * (static_cast<double>(i) + 0.1) / static_cast<double>(sel.size());
      const double y1 = to_y(std::max(r.value, 0.0)), y2 = to_y(std::min(r.value, 0.0));
      os << "<rect class=\"bar\" data-scenario=\"" << detail::escape(r.scenario) << "\" data-method=\""
         << detail::escape(r.method) << "\" data-value=\"" << detail::num(r.value) << "\" x=\"" << detail::num(x)
         << "\" y=\"" << detail::num(y1) << "\" width=\"" << detail::num(bar_w) << "\" height=\""
         << detail::num(std::max(y2 - y1, 0.5)) << "\" fill=\"" << palette[color] << "\"/>\n";
      os << "<text x=\"" << detail::num(x + bar_w / 2) << "\" y=\"" << detail::num(base + 14.0)
         << "\" font-size=\"9\" text-anchor=\"middle\">" << detail::escape(r.method) << "</text>\n";
    }
    os << "<text x=\"" << detail::num(x0 - 5.0) << "\" y=\"" << detail::num(y0 + 4.0)
       << "\" font-size=\"10\" text-anchor=\"end\">" << fixed(hi, 3) << "</text>\n";
    os << "<text x=\"" << detail::num(x0 - 5.0) << "\" y=\"" << detail::num(base) << "\" font-size=\"10\" text-anchor=\"end\">"
       << fixed(lo, 3) << "</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---- bootstrap and study output ----

inline json bootstrap_to_json(const boot::BootstrapResult& b, bool include_draws) {
  json j;
  j["schema"] = kBootstrapSchema;
  j["B"] = b.B;
  j["alpha"] = b.alpha;
  j["total_retries"] = b.total_retries;
  j["dropped_draws"] = b.dropped_draws;
  j["weights_conserved"] = b.all_weights_conserved();
  j["subgroups"] = json::array();
  for (const auto& s : b.subgroups) {
    json e{{"k", s.k}, {"n", s.n_k}, {"smoothed", number(s.smoothed)}, {"ci", {number(s.ci_low), number(s.ci_high)}}};
    e["probabilities"] = json::array();
    for (const auto& p : s.probabilities)
      e["probabilities"].push_back({{"threshold", p.threshold}, {"direction", param::to_string(p.direction)}, {"probability", p.probability}});
    if (include_draws) e["draws"] = s.draws;
    j["subgroups"].push_back(std::move(e));
  }
  return j;
}

inline json study_to_json(const study::StudyResult& res, const std::vector<study::MetricSummary>& rows) {
  json j;
  j["schema"] = kStudySchema;
  j["replicates"] = res.config.replicates;
  j["seed"] = res.config.seed;
  j["num_trees"] = res.config.num_trees;
  j["oracle_m"] = res.config.oracle_m;
  j["cutoffs"] = res.config.cutoffs;
  j["methods"] = json::array();
  for (auto m : res.config.methods) j["methods"].push_back(study::to_string(m));
  j["scenarios"] = json::array();
  for (const auto& s : res.config.scenarios)
    j["scenarios"].push_back({{"label", s.label()}, {"family", to_string(s.outcome_family)},
                              {"setting", sim::to_string(s.effect_setting)}, {"n_noise", s.n_noise}, {"n", s.n}});
  j["metrics"] = json::array();
  for (const auto& r : rows)
    j["metrics"].push_back({{"scenario", r.scenario}, {"method", r.method}, {"metric", r.metric}, {"value", number(r.value)},
                            {"mc_se", number(r.mc_se)}, {"count", r.count}, {"excluded", r.excluded}});
  return j;
}

}  // namespace prism::report
