// prism: subgroup identification on trial CSVs, simulation and study runs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "prism/prism.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prism;

namespace {

struct DataOptions {
  std::string path;
  std::string outcome = "y";
  std::string treatment = "a";
  std::map<std::string, CovariateKind> kinds;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::set<std::string> parse_formats(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string f;
  while (std::getline(ss, f, ',')) {
    if (f != "json" && f != "text" && f != "svg") throw InputError("unknown format '" + f + "'");
    out.insert(f);
  }
  return out;
}

/// Reads the optional "data" block of a config file into the data options.
void apply_data_block(const json& j, DataOptions& d) {
  if (!j.contains("data")) return;
  const json& b = j["data"];
  if (!b.is_object()) throw InputError("config 'data' must be an object");
  for (const auto& [k, v] : b.items()) {
    if (k == "outcome") {
      d.outcome = v.get<std::string>();
    } else if (k == "treatment") {
      d.treatment = v.get<std::string>();
    } else if (k == "covariate_kinds") {
      for (const auto& [name, kind] : v.items()) {
        const auto s = kind.get<std::string>();
        if (s != "binary" && s != "continuous") throw InputError("covariate kind must be binary or continuous");
        d.kinds[name] = s == "binary" ? CovariateKind::binary : CovariateKind::continuous;
      }
    } else {
      throw InputError("unknown key '" + k + "' in data");
    }
  }
}

struct AnalyzeArgs {
  DataOptions data;
  std::string config_path;
  std::optional<std::string> configuration;
  std::optional<std::string> family;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> bootstrap_b;
  std::string out_dir = ".";
  std::string formats = "json,text,svg";
  bool keep_draws = false;
};

PipelineConfig resolve_config(AnalyzeArgs& args, const TrialDataset* ds) {
  json j = json::object();
  if (!args.config_path.empty()) j = read_json(args.config_path);
  if (args.configuration) j["configuration"] = *args.configuration;
  if (args.family) j["family"] = *args.family;
  if (!j.contains("family") && ds) j["family"] = ds->outcome_is_binary() ? "binary" : "continuous";
  if (args.seed) j["seed"] = *args.seed;
  if (args.bootstrap_b) j["bootstrap_b"] = *args.bootstrap_b;
  return report::config_from_json(j);
}

json manifest(const std::string& command, const std::vector<std::string>& argv, const json& extra) {
  json m{{"tool", "prism"}, {"version", kVersion}, {"command", command}, {"argv", argv}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  return m;
}

int run_analyze(AnalyzeArgs& args, bool force_bootstrap, const std::vector<std::string>& argv) {
  json cfg_json = json::object();
  if (!args.config_path.empty()) {
    cfg_json = read_json(args.config_path);
    apply_data_block(cfg_json, args.data);
  }
  const TrialDataset ds = load_csv(args.data.path, args.data.outcome, args.data.treatment, args.data.kinds);
  PipelineConfig cfg = resolve_config(args, &ds);
  if (force_bootstrap && cfg.bootstrap_b == 0) cfg.bootstrap_b = 500;
  const auto formats = parse_formats(args.formats);

  const AnalysisReport rep = run_pipeline(ds, cfg);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const json rj = report::report_to_json(rep);
  if (const auto errs = report::validate_report_json(rj); !errs.empty())
    throw NumericError("report failed schema validation: " + errs.front());
  const std::string text = report::render_tree_text(rep);
  if (formats.count("json")) write_file(out / "report.json", rj.dump(2) + "\n");
  if (formats.count("text")) write_file(out / "report.txt", text);
  if (formats.count("svg")) write_file(out / "forest.svg", report::render_forest_svg(rep));
  std::cout << text;

  json extra{{"input", {{"path", args.data.path},
                        {"outcome", args.data.outcome},
                        {"treatment", args.data.treatment},
                        {"hash", report::hex(rep.manifest.input_hash)}}},
             {"seed", cfg.seed},
             {"config", report::config_to_json(cfg)},
             {"config_hash", report::hex(cfg.hash())}};
  if (cfg.bootstrap_b > 0) {
    boot::BootstrapOptions bo;
    bo.B = cfg.bootstrap_b;
    bo.alpha = cfg.bayes.alpha;
    bo.thresholds = cfg.bayes.thresholds;
    const std::uint64_t boot_seed = CounterRng(cfg.seed).derive(99).key();
    const boot::BootstrapResult br = boot::bootstrap_prism(ds, rep, cfg, bo, boot_seed);
    write_file(out / "bootstrap.json", report::bootstrap_to_json(br, args.keep_draws).dump(2) + "\n");
    extra["bootstrap_seed"] = boot_seed;
    std::cout << "bootstrap: B=" << br.B << " retries=" << br.total_retries << '\n';
    for (const auto& s : br.subgroups)
      std::cout << "  k=" << s.k << " smoothed=" << report::fixed(s.smoothed) << " [" << report::fixed(s.ci_low) << ", "
                << report::fixed(s.ci_high) << "]\n";
  }
  write_file(out / "manifest.json", manifest(force_bootstrap ? "bootstrap" : "analyze", argv, extra).dump(2) + "\n");
  return 0;
}

struct SimulateArgs {
  std::string family = "continuous";
  std::string setting = "subgroup4";
  int n_noise = 6;
  std::size_t n = 800;
  std::uint64_t seed = 1;
  std::size_t oracle_m = 10000;
  std::string out_dir = ".";
  std::string name = "trial";
};

sim::EffectSetting parse_setting(const std::string& s) {
  if (s == "null") return sim::EffectSetting::null;
  if (s == "subgroup4") return sim::EffectSetting::subgroup4;
  throw InputError("unknown effect setting '" + s + "'");
}

int run_simulate(const SimulateArgs& args, const std::vector<std::string>& argv) {
  sim::SimScenario sc;
  sc.outcome_family = report::parse_family(args.family);
  sc.effect_setting = parse_setting(args.setting);
  sc.n_noise = args.n_noise;
  sc.n = args.n;
  sc.seed = args.seed;
  if (sc.n_noise < 6) throw InputError("n_noise must be >= 6");
  if (sc.n % 2 != 0 || sc.n < 2) throw InputError("n must be even");
  const TrialDataset ds = sim::generate_trial(sc);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_csv(ds, out / (args.name + ".csv"));
  const double ate = sim::oracle_true_subgroup_effect([](const TrialDataset&, std::size_t) { return true; }, sc,
                                                      args.oracle_m, CounterRng(sc.seed).derive(7));
  json side{{"scenario",
             {{"family", args.family},
              {"setting", args.setting},
              {"n_noise", sc.n_noise},
              {"n", sc.n},
              {"seed", sc.seed},
              {"canonical", sc.canonical()},
              {"label", sc.label()}}},
            {"oracle_ate", ate},
            {"oracle_m", args.oracle_m},
            {"dataset_hash", report::hex(dataset_hash(ds))},
            {"manifest", manifest("simulate", argv, json::object())}};
  write_file(out / (args.name + ".json"), side.dump(2) + "\n");
  std::cout << "wrote " << (out / (args.name + ".csv")).string() << " (n=" << ds.n() << ", p=" << ds.p()
            << ", oracle ATE=" << report::fixed(ate) << ")\n";
  return 0;
}

struct StudyArgs {
  std::vector<std::string> scenarios{"continuous:subgroup4:6"};
  std::vector<std::string> methods{"MOB", "PRISM_A", "PRISM_B", "Oracle", "StandardPractice"};
  std::size_t replicates = 200;
  std::uint64_t seed = 1;
  std::size_t n = 800;
  std::size_t num_trees = 500;
  std::size_t oracle_m = 10000;
  std::size_t threads = 0;
  std::string out_dir = ".";
  std::string formats = "json,svg";
};

int run_study_cmd(const StudyArgs& args, const std::vector<std::string>& argv) {
  study::StudyConfig cfg;
  for (const auto& s : args.scenarios) {
    std::stringstream ss(s);
    std::string fam, set, noise;
    if (!std::getline(ss, fam, ':') || !std::getline(ss, set, ':') || !std::getline(ss, noise))
      throw InputError("scenario must look like family:setting:noise, got '" + s + "'");
    sim::SimScenario sc;
    sc.outcome_family = report::parse_family(fam);
    sc.effect_setting = parse_setting(set);
    try {
      sc.n_noise = std::stoi(noise);
    } catch (const std::exception&) {
      throw InputError("bad noise count in '" + s + "'");
    }
    if (sc.n_noise < 6) throw InputError("n_noise must be >= 6");
    sc.n = args.n;
    cfg.scenarios.push_back(sc);
  }
  cfg.methods.clear();
  for (const auto& m : args.methods) cfg.methods.push_back(study::parse_method(m));
  cfg.replicates = args.replicates;
  cfg.seed = args.seed;
  cfg.num_trees = args.num_trees;
  cfg.oracle_m = args.oracle_m;
  cfg.threads = args.threads;
  const auto formats = parse_formats(args.formats);

  const study::StudyResult res = study::run_study(cfg);
  const auto rows = study::summarize(res);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  {
    std::ofstream csv(out / "study.csv");
    study::write_tidy_csv(rows, csv);
  }
  if (formats.count("json")) write_file(out / "study.json", report::study_to_json(res, rows).dump(2) + "\n");
  if (formats.count("svg"))
    write_file(out / "study.svg",
               report::render_study_svg(rows, {"bias_abs", "coverage", "rel_eff_vs_mob", "accuracy@0.5", "accuracy"}));
  write_file(out / "manifest.json", manifest("study", argv, {{"seed", cfg.seed}}).dump(2) + "\n");
  study::write_tidy_csv(rows, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args_copy(argv, argv + argc);
  CLI::App app{"Subgroup identification for randomized trials"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  AnalyzeArgs analyze;
  auto add_analyze = [](CLI::App* sub, AnalyzeArgs& a) {
    sub->add_option("--data", a.data.path, "Trial CSV with a header row")->required();
    sub->add_option("--outcome", a.data.outcome, "Outcome column");
    sub->add_option("--treatment", a.data.treatment, "Treatment column (0 = control, 1 = test)");
    sub->add_option("--config", a.config_path, "JSON configuration file");
    sub->add_option("--configuration", a.configuration, "MOB, PRISM_A or PRISM_B");
    sub->add_option("--family", a.family, "continuous or binary (default: inferred from the outcome)");
    sub->add_option("--seed", a.seed, "Random seed");
    sub->add_option("--out", a.out_dir, "Output directory");
    sub->add_option("--format", a.formats, "Comma-separated subset of json,text,svg");
    sub->add_flag("--keep-draws", a.keep_draws, "Store bootstrap draws in bootstrap.json");
  };
  CLI::App* an = app.add_subcommand("analyze", "Run the pipeline on a CSV");
  add_analyze(an, analyze);
  an->add_option("--bootstrap", analyze.bootstrap_b, "Bootstrap resamples (0 = off)");

  AnalyzeArgs bootstrap;
  CLI::App* bs = app.add_subcommand("bootstrap", "Run the pipeline plus the nonparametric bootstrap");
  add_analyze(bs, bootstrap);
  bs->add_option("--B", bootstrap.bootstrap_b, "Bootstrap resamples (default 500)");

  SimulateArgs simulate;
  CLI::App* si = app.add_subcommand("simulate", "Write a simulated trial CSV and JSON sidecar");
  si->add_option("--family", simulate.family, "continuous or binary");
  si->add_option("--setting", simulate.setting, "null or subgroup4");
  si->add_option("--noise", simulate.n_noise, "Noise covariate count (6 or 56 in the reference design)");
  si->add_option("--n", simulate.n, "Sample size (even)");
  si->add_option("--seed", simulate.seed, "Random seed");
  si->add_option("--oracle-m", simulate.oracle_m, "Oracle patients per arm");
  si->add_option("--out", simulate.out_dir, "Output directory");
  si->add_option("--name", simulate.name, "Base file name");

  StudyArgs study_args;
  CLI::App* st = app.add_subcommand("study", "Run the simulation study");
  st->add_option("--scenario", study_args.scenarios, "family:setting:noise, repeatable");
  st->add_option("--methods", study_args.methods, "Methods to run")->delimiter(',');
  st->add_option("--replicates", study_args.replicates, "Replicates per scenario");
  st->add_option("--seed", study_args.seed, "Base seed");
  st->add_option("--n", study_args.n, "Trial size");
  st->add_option("--num-trees", study_args.num_trees, "Trees per arm forest");
  st->add_option("--oracle-m", study_args.oracle_m, "Oracle patients per arm");
  st->add_option("--threads", study_args.threads, "Worker threads (0 = all cores)");
  st->add_option("--out", study_args.out_dir, "Output directory");
  st->add_option("--format", study_args.formats, "Comma-separated subset of json,svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*an) return run_analyze(analyze, false, args_copy);
    if (*bs) return run_analyze(bootstrap, true, args_copy);
    if (*si) return run_simulate(simulate, args_copy);
    if (*st) return run_study_cmd(study_args, args_copy);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.numeric() ? 2 : 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
