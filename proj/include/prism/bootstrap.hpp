#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "prism/data.hpp"
#include "prism/error.hpp"
#include "prism/parallel.hpp"
#include "prism/param.hpp"
#include "prism/pipeline.hpp"
#include "prism/rng.hpp"
#include "prism/stats.hpp"

namespace prism::boot {

struct BootstrapOptions {
  std::size_t B = 500;
  double alpha = 0.05;
  std::vector<double> thresholds{0.0};
  std::size_t max_retries = 10;  // redraws per resample when one arm is missing
  std::size_t threads = 0;
  std::optional<PipelineConfig> resample_config;  // defaults to the original configuration
};

/// One resample: its subgroup count and the overlap counts n(k, k_b) of the
/// original rows, for original k = 0..K and bootstrap k_b = 1..K_b.
struct ResampleRecord {
  std::size_t retries = 0;
  int num_subgroups = 0;
  std::vector<std::vector<std::size_t>> overlap;
  std::vector<double> estimates;  // theta_{k,b} for k = 0..K
  bool weights_conserved = false;
};

struct BootstrapSubgroup {
  int k = 0;
  std::size_t n_k = 0;
  std::vector<double> draws;  // finite theta_{k,b}
  double smoothed = param::kNaN;
  double ci_low = param::kNaN;
  double ci_high = param::kNaN;
  std::vector<param::ProbStatement> probabilities;
};

struct BootstrapResult {
  std::size_t B = 0;
  double alpha = 0.05;
  std::vector<BootstrapSubgroup> subgroups;  // k = 0..K
  std::vector<ResampleRecord> resamples;
  std::size_t total_retries = 0;
  std::size_t dropped_draws = 0;  // non-finite resample estimates

  bool all_weights_conserved() const {
    for (const auto& r : resamples)
      if (!r.weights_conserved) return false;
    return true;
  }
};

/// Summaries of a vector of resample estimates.
inline BootstrapSubgroup summarize_draws(std::vector<double> draws, double alpha, const std::vector<double>& thresholds) {
  BootstrapSubgroup s;
  s.draws = std::move(draws);
  if (s.draws.empty()) return s;
  s.smoothed = stats::mean(s.draws);
  s.ci_low = stats::quantile_type7(s.draws, alpha / 2.0);
  s.ci_high = stats::quantile_type7(s.draws, 1.0 - alpha / 2.0);
  const double B = static_cast<double>(s.draws.size());
  for (double c : thresholds) {
    double below = 0.0, above = 0.0;
    for (double v : s.draws) {
      below += v < c ? 1.0 : 0.0;
      above += v > c ? 1.0 : 0.0;
    }
    s.probabilities.push_back({c, param::Direction::less, below / B});
    s.probabilities.push_back({c, param::Direction::greater, above / B});
  }
  return s;
}

/// Overlap-weighted estimates for the original subgroups from one resample
/// fit: original rows are routed through the resample's tree.
inline ResampleRecord map_resample(const TrialDataset& ds, const AnalysisReport& original, const AnalysisReport& fit) {
  const int K = original.num_subgroups();
  const int Kb = fit.num_subgroups();
  ResampleRecord rec;
  rec.num_subgroups = Kb;
  rec.overlap.assign(static_cast<std::size_t>(K) + 1, std::vector<std::size_t>(static_cast<std::size_t>(Kb), 0));
  std::vector<std::size_t> n_k(static_cast<std::size_t>(K) + 1, 0);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const int k = original.assignment[i];
    const int kb = fit.tree.route(ds, i);
    ++rec.overlap[0][static_cast<std::size_t>(kb - 1)];
    ++rec.overlap[static_cast<std::size_t>(k)][static_cast<std::size_t>(kb - 1)];
    ++n_k[0];
    ++n_k[static_cast<std::size_t>(k)];
  }
  rec.weights_conserved = true;
  rec.estimates.assign(static_cast<std::size_t>(K) + 1, param::kNaN);
  for (std::size_t k = 0; k <= static_cast<std::size_t>(K); ++k) {
    std::size_t total = 0;
    double anchor = param::kNaN, num = 0.0, den = 0.0;
    for (std::size_t kb = 0; kb < static_cast<std::size_t>(Kb); ++kb) {
      const std::size_t w = rec.overlap[k][kb];
      total += w;
      if (w == 0) continue;
      const double est = fit.estimates[kb + 1].estimate();
      if (!std::isfinite(est)) continue;
      if (std::isnan(anchor)) anchor = est;
      // offsets from the first estimate keep a single-valued average exact
      num += static_cast<double>(w) * (est - anchor);
      den += static_cast<double>(w);
    }
    rec.weights_conserved = rec.weights_conserved && total == n_k[k];
    if (den > 0.0) rec.estimates[k] = anchor + num / den;
  }
  return rec;
}

/// Nonparametric bootstrap of the whole pipeline: B resamples of n rows with
/// replacement, each refit and mapped back onto the original subgroups.
inline BootstrapResult bootstrap_prism(const TrialDataset& ds, const AnalysisReport& original, const PipelineConfig& cfg,
                                       const BootstrapOptions& opt, std::uint64_t seed) {
  if (opt.B < 1) throw InputError("bootstrap needs B >= 1");
  if (original.assignment.size() != ds.n()) throw InputError("original report does not match the dataset");
  if (original.num_subgroups() < 1 ||
      original.estimates.size() != static_cast<std::size_t>(original.num_subgroups()) + 1)
    throw InputError("original report has no fitted subgroups");
  const PipelineConfig base = opt.resample_config.value_or(cfg);
  const std::size_t n = ds.n();
  const CounterRng root(seed);

  BootstrapResult res;
  res.B = opt.B;
  res.alpha = opt.alpha;
  res.resamples.resize(opt.B);
  parallel_for(opt.B, opt.threads, [&](std::size_t b) {
    CounterRng rng = root.derive(b);
    CounterRng draw_rng = rng.derive(0);
    std::vector<std::size_t> rows(n);
    std::size_t retries = 0;
    for (;;) {
      for (auto& r : rows) r = static_cast<std::size_t>(draw_rng.below(n));
      std::size_t treated = 0;
      for (auto r : rows) treated += static_cast<std::size_t>(ds.a[r]);
      if (treated > 0 && treated < n) break;
      if (++retries > opt.max_retries) throw NumericError("bootstrap resample kept drawing a single treatment arm");
    }
    PipelineConfig c = base;
    c.seed = rng.derive(1).key();
    c.forest.threads = 1;  // parallelism lives at the resample level
    c.enet.threads = 1;
    const TrialDataset sample = ds.subset(rows);
    const AnalysisReport fit = run_pipeline(sample, c);
    ResampleRecord rec = map_resample(ds, original, fit);
    rec.retries = retries;
    res.resamples[b] = std::move(rec);
  });

  const int K = original.num_subgroups();
  for (int k = 0; k <= K; ++k) {
    std::vector<double> draws;
    for (const auto& r : res.resamples) {
      const double v = r.estimates[static_cast<std::size_t>(k)];
      if (std::isfinite(v))
        draws.push_back(v);
      else
        ++res.dropped_draws;
    }
    BootstrapSubgroup s = summarize_draws(std::move(draws), opt.alpha, opt.thresholds);
    s.k = k;
    s.n_k = k == 0 ? n : original.estimates[static_cast<std::size_t>(k)].n_k;
    res.subgroups.push_back(std::move(s));
  }
  for (const auto& r : res.resamples) res.total_retries += r.retries;
  return res;
}

}  // namespace prism::boot
