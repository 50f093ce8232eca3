#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "buildtune/analysis.hpp"
#include "buildtune/buildsim.hpp"
#include "buildtune/metrics.hpp"

namespace buildtune::cli {
namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("BUILDTUNE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      // fall through to the built-in default
    }
  }
  return 42;
}

struct Common {
  std::uint64_t seed = default_seed();
  std::string out_path;
  std::string format;
  int verbosity = 0;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_format,
                std::vector<std::string> formats) {
  c.format = default_format;
  sub->add_option("--seed", c.seed, "Random seed (default 42, or $BUILDTUNE_SEED)");
  sub->add_option("--out", c.out_path, "Output file (default: standard output)");
  sub->add_option("--format", c.format, "Output format")->check(CLI::IsMember(formats));
  sub->add_flag("-v,--verbose", c.verbosity, "Progress on standard error");
}

void emit(const Common& c, std::ostream& out, const std::string& text) {
  if (c.out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(c.out_path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + c.out_path + "'");
  f << text;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
}

std::vector<Strategy> parse_strategies(const std::vector<std::string>& names) {
  std::vector<Strategy> out;
  for (const auto& n : names) out.push_back(parse_strategy(n));
  return out;
}

const auto kStrategyCheck = CLI::IsMember({"bayesian", "crowd", "random"});

std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

// Model from --model, or fitted on every record of --dataset.
FactorModel model_from_inputs(const std::string& model_path, const std::string& dataset_path,
                              double smoothing) {
  if (!model_path.empty()) return load_model(model_path);
  Dataset d = load_dataset(dataset_path);
  return FactorModel::fit(d.records(), d.graph_ptr(), smoothing);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive sampling of package build configurations", "buildtune"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // run ---------------------------------------------------------------------
  Common run_c;
  std::string run_graph, run_oracle, run_strategy = "bayesian", run_model_out;
  std::size_t run_budget = 100, run_bootstrap = 20, run_pool = 0;
  double run_smoothing = 1.0, run_floor = 0.0;
  auto* run_cmd = app.add_subcommand("run", "Run the adaptive sampling loop; writes a JSONL trace");
  add_common(run_cmd, run_c, "json", {"json"});
  run_cmd->add_option("--graph", run_graph, "Dependency graph JSON")->required();
  run_cmd->add_option("--oracle", run_oracle, "dataset:<records.jsonl> or synthetic:<rules.json>")->required();
  run_cmd->add_option("--strategy", run_strategy, "bayesian, crowd or random")->check(kStrategyCheck);
  run_cmd->add_option("--budget", run_budget, "Selections after the bootstrap");
  run_cmd->add_option("--bootstrap", run_bootstrap, "Initial uniform samples")->check(CLI::PositiveNumber);
  run_cmd->add_option("--pool", run_pool, "Fresh candidates per iteration (0: exhaustive)");
  run_cmd->add_option("--smoothing", run_smoothing, "Factor pseudo-count")->check(CLI::PositiveNumber);
  run_cmd->add_option("--crowd-floor", run_floor, "Floor on crowd frequencies");
  run_cmd->add_option("--model-out", run_model_out, "Export the final model as JSON");

  // eval --------------------------------------------------------------------
  Common eval_c;
  std::string eval_dataset;
  std::vector<std::string> eval_strategies{"bayesian", "crowd", "random"};
  std::vector<std::size_t> eval_sizes{20, 40, 60, 80, 100};
  std::size_t eval_reps = 10, eval_bootstrap = 20;
  double eval_smoothing = 1.0;
  auto* eval_cmd = app.add_subcommand("eval", "Precision/recall sweep over sample sizes");
  add_common(eval_cmd, eval_c, "csv", {"csv", "json"});
  eval_cmd->add_option("--dataset", eval_dataset, "Record file (JSONL)")->required();
  eval_cmd->add_option("--strategies", eval_strategies)->delimiter(',')->check(kStrategyCheck);
  eval_cmd->add_option("--sizes", eval_sizes, "Sample sizes")->delimiter(',');
  eval_cmd->add_option("--repetitions", eval_reps)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--bootstrap", eval_bootstrap)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--smoothing", eval_smoothing)->check(CLI::PositiveNumber);

  // auprc -------------------------------------------------------------------
  Common auprc_c;
  std::string auprc_dataset;
  std::vector<std::string> auprc_strategies{"bayesian", "crowd", "random"};
  std::vector<double> auprc_cutoffs;
  std::size_t auprc_reps = 10, auprc_selections = 100, auprc_bootstrap = 20;
  double auprc_fraction = 0.5, auprc_smoothing = 1.0;
  auto* auprc_cmd = app.add_subcommand("auprc", "Train/test AUPRC of each strategy");
  add_common(auprc_cmd, auprc_c, "json", {"csv", "json"});
  auprc_cmd->add_option("--dataset", auprc_dataset, "Record file (JSONL)")->required();
  auprc_cmd->add_option("--strategies", auprc_strategies)->delimiter(',')->check(kStrategyCheck);
  auprc_cmd->add_option("--repetitions", auprc_reps, "Seeds seed..seed+n-1")->check(CLI::PositiveNumber);
  auprc_cmd->add_option("--selections", auprc_selections);
  auprc_cmd->add_option("--bootstrap", auprc_bootstrap)->check(CLI::PositiveNumber);
  auprc_cmd->add_option("--train-fraction", auprc_fraction)->check(CLI::Range(0.0, 1.0));
  auprc_cmd->add_option("--smoothing", auprc_smoothing)->check(CLI::PositiveNumber);
  auprc_cmd->add_option("--cutoffs", auprc_cutoffs, "Recall cutoffs for truncated AUPRC")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  // importance --------------------------------------------------------------
  Common imp_c;
  std::string imp_dataset, imp_model;
  std::size_t imp_top = 5;
  double imp_smoothing = 1.0;
  auto* imp_cmd = app.add_subcommand("importance", "Rank packages and edges by JS divergence");
  add_common(imp_cmd, imp_c, "csv", {"csv", "json"});
  auto* imp_ds = imp_cmd->add_option("--dataset", imp_dataset, "Fit on every record of this file");
  auto* imp_md = imp_cmd->add_option("--model", imp_model, "Exported model JSON");
  imp_ds->excludes(imp_md);
  imp_cmd->add_option("--top-k", imp_top)->check(CLI::PositiveNumber);
  imp_cmd->add_option("--smoothing", imp_smoothing)->check(CLI::PositiveNumber);

  // heatmap -----------------------------------------------------------------
  Common heat_c;
  std::string heat_dataset, heat_model, heat_dir, heat_edge;
  double heat_threshold = kDefaultConstraintThreshold, heat_smoothing = 1.0;
  auto* heat_cmd = app.add_subcommand("heatmap", "Per-edge version-pair EI matrices and constraints");
  add_common(heat_cmd, heat_c, "csv", {"csv"});
  auto* heat_ds = heat_cmd->add_option("--dataset", heat_dataset, "Fit on every record of this file");
  auto* heat_md = heat_cmd->add_option("--model", heat_model, "Exported model JSON");
  heat_ds->excludes(heat_md);
  heat_cmd->add_option("--out-dir", heat_dir, "Directory for matrices and constraints.json")->required();
  heat_cmd->add_option("--edge", heat_edge, "Only this parent+child edge");
  heat_cmd->add_option("--threshold", heat_threshold, "Relative EI threshold")->check(CLI::Range(0.0, 1.0));
  heat_cmd->add_option("--smoothing", heat_smoothing)->check(CLI::PositiveNumber);

  // simulate ----------------------------------------------------------------
  Common sim_c;
  std::string sim_graph, sim_dataset, sim_rules, sim_latency = "unit";
  std::size_t sim_samples = 0, sim_workers = 1;
  double sim_sigma = 0.5;
  auto* sim_cmd = app.add_subcommand("simulate", "Farmer-worker build simulation");
  add_common(sim_cmd, sim_c, "json", {"json"});
  sim_cmd->add_option("--graph", sim_graph, "Dependency graph JSON")->required();
  auto* sim_ds = sim_cmd->add_option("--dataset", sim_dataset, "Build the configurations of this file");
  auto* sim_n = sim_cmd->add_option("--samples", sim_samples, "Build this many random configurations");
  sim_ds->excludes(sim_n);
  sim_cmd->add_option("--rules", sim_rules, "Planted rules deciding unit failures");
  sim_cmd->add_option("--workers", sim_workers)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--latency", sim_latency)->check(CLI::IsMember({"unit", "lognormal"}));
  sim_cmd->add_option("--sigma", sim_sigma, "Log-normal shape")->check(CLI::NonNegativeNumber);

  // gen-synthetic -----------------------------------------------------------
  Common gen_c;
  BenchmarkSpec gen_spec;
  std::string gen_dir;
  std::size_t gen_dataset_size = 0;
  bool gen_enumerate = false;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a graph with planted incompatibilities");
  add_common(gen_cmd, gen_c, "json", {"json"});
  gen_cmd->add_option("--out-dir", gen_dir, "Directory for graph.json, rules.json, dataset.jsonl")->required();
  auto* gen_pk = gen_cmd->add_option("--packages", gen_spec.packages)->check(CLI::PositiveNumber);
  auto* gen_dom = gen_cmd->add_option("--domains", gen_spec.domain_sizes, "Explicit domain sizes")->delimiter(',');
  gen_cmd->add_option("--min-domain", gen_spec.min_domain)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-domain", gen_spec.max_domain)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--target-rate", gen_spec.target_rate)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--rule-density", gen_spec.rule_density)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--noise", gen_spec.noise)->check(CLI::Range(0.0, 1.0));
  auto* gen_n = gen_cmd->add_option("--dataset-size", gen_dataset_size, "Also emit this many labelled records");
  auto* gen_all = gen_cmd->add_flag("--enumerate", gen_enumerate, "Also emit the whole labelled space");
  gen_n->excludes(gen_all);

  // summary -----------------------------------------------------------------
  Common sum_c;
  std::string sum_dataset, sum_name;
  auto* sum_cmd = app.add_subcommand("summary", "Record counts per dataset");
  add_common(sum_cmd, sum_c, "json", {"json", "text"});
  sum_cmd->add_option("--dataset", sum_dataset, "Record file (JSONL)")->required();
  sum_cmd->add_option("--name", sum_name, "Label for the text table");

  std::vector<std::string> argv_store{"buildtune"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsageError;
  }
  if ((imp_cmd->parsed() && imp_dataset.empty() && imp_model.empty()) ||
      (heat_cmd->parsed() && heat_dataset.empty() && heat_model.empty())) {
    err << "error: one of --dataset or --model is required\n";
    return kUsageError;
  }
  if (sim_cmd->parsed() && sim_dataset.empty() && sim_samples == 0) {
    err << "error: one of --dataset or --samples is required\n";
    return kUsageError;
  }
  if (run_cmd->parsed() && run_oracle.rfind("dataset:", 0) != 0 && run_oracle.rfind("synthetic:", 0) != 0) {
    err << "error: --oracle must be dataset:<path> or synthetic:<path>\n";
    return kUsageError;
  }

  try {
    if (run_cmd->parsed()) {
      auto graph = std::make_shared<const DependencyGraph>(load_graph(run_graph));
      SamplerConfig cfg;
      cfg.strategy = parse_strategy(run_strategy);
      cfg.budget = run_budget;
      cfg.bootstrap_size = run_bootstrap;
      cfg.seed = run_c.seed;
      cfg.smoothing = run_smoothing;
      cfg.crowd_floor = run_floor;
      if (run_pool > 0) cfg.candidates = CandidateMode::pool(run_pool);
      std::optional<Dataset> dataset;
      std::unique_ptr<BuildOracle> oracle;
      if (run_oracle.rfind("dataset:", 0) == 0) {
        dataset.emplace(load_dataset(run_oracle.substr(8), graph));
        oracle = std::make_unique<DatasetOracle>(*dataset);
      } else {
        oracle = std::make_unique<SyntheticOracle>(graph, load_rules(*graph, run_oracle.substr(10)), run_c.seed);
      }
      RunResult result = run(*oracle, graph, cfg);
      std::string text;
      for (const auto& e : result.trace) text += trace_entry_to_json(e).dump() + "\n";
      emit(run_c, out, text);
      if (!run_model_out.empty()) save_model(result.model, run_model_out);
      if (run_c.verbosity > 0) {
        err << "evaluated " << result.history.size() << " configurations, " << result.history.good_count()
            << " built\n";
      }
    } else if (eval_cmd->parsed()) {
      Dataset dataset = load_dataset(eval_dataset);
      SweepOptions opts;
      opts.strategies = parse_strategies(eval_strategies);
      opts.sample_sizes = eval_sizes;
      opts.repetitions = eval_reps;
      opts.base_seed = eval_c.seed;
      opts.sampler.bootstrap_size = eval_bootstrap;
      opts.sampler.smoothing = eval_smoothing;
      auto reports = sweep_experiment(dataset, opts);
      emit(eval_c, out, eval_c.format == "csv" ? reports_to_csv(reports) : reports_to_json(reports).dump(2) + "\n");
    } else if (auprc_cmd->parsed()) {
      Dataset dataset = load_dataset(auprc_dataset);
      AuprcOptions opts;
      opts.train_fraction = auprc_fraction;
      opts.bootstrap_size = auprc_bootstrap;
      opts.selections = auprc_selections;
      opts.smoothing = auprc_smoothing;
      auto strategies = parse_strategies(auprc_strategies);
      std::sort(strategies.begin(), strategies.end(),
                [](Strategy a, Strategy b) { return std::string(to_string(a)) < to_string(b); });
      Json doc = Json::array();
      std::string csv = "strategy,seed,auprc\n";
      for (Strategy s : strategies) {
        std::vector<double> values;
        std::vector<std::uint64_t> seeds;
        std::vector<std::vector<double>> per_cutoff(auprc_cutoffs.size());
        for (std::size_t r = 0; r < auprc_reps; ++r) {
          const std::uint64_t seed = repetition_seed(auprc_c.seed, r);
          AuprcResult res = auprc_experiment(dataset, s, seed, opts);
          values.push_back(res.auprc);
          seeds.push_back(seed);
          for (std::size_t c = 0; c < auprc_cutoffs.size(); ++c) {
            per_cutoff[c].push_back(auprc_at_cutoff(res.ranking, auprc_cutoffs[c]));
          }
          csv += std::string(to_string(s)) + "," + std::to_string(seed) + "," + fixed6(res.auprc) + "\n";
        }
        auto [mean, sd] = mean_sd(values);
        Json j{{"strategy", to_string(s)}, {"seeds", seeds}, {"auprc", values}, {"mean", mean}, {"sd", sd}};
        if (!auprc_cutoffs.empty()) {
          Json cuts = Json::array();
          for (std::size_t c = 0; c < auprc_cutoffs.size(); ++c) {
            cuts.push_back({{"cutoff", auprc_cutoffs[c]}, {"mean", mean_sd(per_cutoff[c]).first}});
          }
          j["cutoffs"] = cuts;
        }
        doc.push_back(std::move(j));
      }
      emit(auprc_c, out, auprc_c.format == "csv" ? csv : doc.dump(2) + "\n");
    } else if (imp_cmd->parsed()) {
      FactorModel model = model_from_inputs(imp_model, imp_dataset, imp_smoothing);
      auto ranking = importance_ranking(model, imp_top);
      if (imp_c.format == "csv") {
        emit(imp_c, out, importance_to_csv(ranking));
      } else {
        Json arr = Json::array();
        for (const auto& e : ranking) {
          arr.push_back({{"target", e.target},
                         {"kind", e.kind == ImportanceEntry::Kind::kEdge ? "edge" : "package"},
                         {"score", e.score}});
        }
        emit(imp_c, out, arr.dump(2) + "\n");
      }
    } else if (heat_cmd->parsed()) {
      FactorModel model = model_from_inputs(heat_model, heat_dataset, heat_smoothing);
      const auto& graph = model.graph();
      std::filesystem::create_directories(heat_dir);
      Json constraints = Json::array();
      bool matched = heat_edge.empty();
      for (const Edge& e : graph.edges()) {
        const std::string label = graph.name(e.parent) + "+" + graph.name(e.child);
        if (!heat_edge.empty() && label != heat_edge) continue;
        matched = true;
        CompatibilityMatrix m = pair_compatibility(model, e.parent, e.child);
        write_file(std::filesystem::path(heat_dir) / (label + ".csv"), compatibility_to_csv(graph, m));
        for (auto& c : constraints_to_json(graph, m, extract_constraints(m, heat_threshold))) {
          constraints.push_back(std::move(c));
        }
      }
      if (!matched) throw DataError("no edge named '" + heat_edge + "'");
      write_file(std::filesystem::path(heat_dir) / "constraints.json", constraints.dump(2) + "\n");
      if (!heat_c.out_path.empty() || heat_c.verbosity > 0) {
        err << constraints.size() << " constraints written to " << heat_dir << "\n";
      }
    } else if (sim_cmd->parsed()) {
      auto graph = std::make_shared<const DependencyGraph>(load_graph(sim_graph));
      std::vector<Configuration> configs;
      if (!sim_dataset.empty()) {
        Dataset d = load_dataset(sim_dataset, graph);
        for (const auto& r : d.records()) configs.push_back(r.config);
      } else {
        Rng rng(sim_c.seed, "samples");
        for (std::size_t k = 0; k < sim_samples; ++k) configs.push_back(random_configuration(*graph, rng));
      }
      BuildDag dag = build_dag(*graph, configs);
      PlantedRuleSet rules;
      if (!sim_rules.empty()) rules = load_rules(*graph, sim_rules);
      auto outcome = rule_outcome(dag, *graph, rules, sim_c.seed);
      SimReport rep = sim_latency == "unit" ? simulate(dag, outcome, sim_workers)
                                            : simulate(dag, outcome, sim_workers,
                                                       lognormal_latency(dag, sim_sigma, sim_c.seed));
      Json doc = sim_report_to_json(dag, *graph, rep);
      doc["configurations"] = configs.size();
      doc["workers"] = sim_workers;
      emit(sim_c, out, doc.dump(2) + "\n");
    } else if (gen_cmd->parsed()) {
      gen_spec.seed = gen_c.seed;
      if (gen_dom->count() > 0 && gen_pk->count() == 0) gen_spec.packages = gen_spec.domain_sizes.size();
      Benchmark bench = generate_benchmark(gen_spec);
      std::filesystem::path dir(gen_dir);
      std::filesystem::create_directories(dir);
      write_file(dir / "graph.json", graph_to_json(*bench.graph).dump(2) + "\n");
      write_file(dir / "rules.json", rules_to_json(*bench.graph, bench.rules).dump(2) + "\n");
      std::optional<Dataset> dataset;
      SyntheticOracle oracle(bench.graph, bench.rules, gen_c.seed);
      if (gen_enumerate) {
        dataset.emplace(enumerate_dataset(oracle, bench.graph));
      } else if (gen_dataset_size > 0) {
        Rng rng(gen_c.seed, "dataset");
        dataset.emplace(sample_dataset(oracle, bench.graph, gen_dataset_size, rng));
      }
      if (dataset) {
        std::ostringstream text;
        write_dataset(text, *dataset, "graph.json");
        write_file(dir / "dataset.jsonl", text.str());
      }
      Json summary{{"packages", bench.graph->size()},
                   {"space", bench.space},
                   {"good", bench.good},
                   {"success_rate", bench.success_rate()},
                   {"rules", bench.rules.forbidden.size()}};
      emit(gen_c, out, summary.dump(2) + "\n");
    } else if (sum_cmd->parsed()) {
      Dataset d = load_dataset(sum_dataset);
      DatasetSummary s = summarize(d);
      if (sum_c.format == "text") {
        const std::string name =
            sum_name.empty() ? std::filesystem::path(sum_dataset).stem().string() : sum_name;
        emit(sum_c, out, summary_table(name, s));
      } else {
        emit(sum_c, out, summary_to_json(s).dump(2) + "\n");
      }
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kOk;
}

}  // namespace buildtune::cli
