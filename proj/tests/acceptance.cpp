// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "buildtune/analysis.hpp"
#include "buildtune/buildsim.hpp"
#include "buildtune/metrics.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace buildtune;
using namespace buildtune::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict ei_exactness() {
  auto g = chain3(3, 2, 3);
  // Twelve hand-picked observations: A=v3 with B=v1 never builds, C=v2 is
  // mostly fine.
  std::vector<BuildRecord> h = {
      {cfg({0, 0, 0}), true},  {cfg({0, 1, 1}), true},  {cfg({1, 0, 1}), true},
      {cfg({1, 1, 2}), true},  {cfg({2, 1, 1}), true},  {cfg({0, 0, 2}), false},
      {cfg({2, 0, 0}), false}, {cfg({2, 0, 1}), false}, {cfg({2, 0, 2}), false},
      {cfg({1, 1, 0}), false}, {cfg({0, 1, 2}), true},  {cfg({2, 1, 2}), false},
  };
  FactorModel model = FactorModel::fit(h, g, 1.0);
  DirectModel oracle = direct_model(*g, h, 1.0);
  double worst = 0;
  std::size_t n = 0;
  for (const auto& x : all_configs(*g)) {
    worst = std::max(worst, std::abs(expected_improvement(model, x).value - direct_ei(*g, oracle, x)));
    ++n;
  }
  return {worst <= 1e-12, fmt("%.0f configurations, max |diff| = %.2e", n, worst)};
}

Verdict auprc_exactness() {
  std::mt19937_64 gen(7);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + gen() % 100;
    std::vector<bool> labels(n);
    std::vector<RankedItem> ranked(n);
    for (std::size_t k = 0; k < n; ++k) labels[k] = gen() % 3 == 0;
    labels[gen() % n] = true;
    for (std::size_t k = 0; k < n; ++k) ranked[k] = {static_cast<double>(n - k), labels[k]};
    worst = std::max(worst, std::abs(auprc(ranked) - prefix_auprc(labels)));
  }
  return {worst <= 1e-12, fmt("50 lists, max |diff| = %.2e", worst)};
}

Verdict js_properties() {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0;
  double max_js = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + gen() % 8;
    auto draw = [&] {
      std::vector<double> p(n);
      double s = 0;
      for (auto& x : p) {
        // Sparse, peaked and flat distributions all appear.
        x = (gen() % 4 == 0) ? 0.0 : std::pow(u(gen), 1.0 + static_cast<double>(gen() % 6));
        s += x;
      }
      if (s == 0) {
        p[0] = 1;
        s = 1;
      }
      for (auto& x : p) x /= s;
      return p;
    };
    auto p = draw(), q = draw();
    const double pq = js_divergence(p, q), qp = js_divergence(q, p);
    const double pp = js_divergence(p, p);
    max_js = std::max(max_js, pq);
    bool equal = true;
    for (std::size_t i = 0; i < n; ++i) equal = equal && std::abs(p[i] - q[i]) <= 1e-12;
    if (std::abs(pq - qp) > 1e-12 || pq < 0 || pq > std::numbers::ln2 + 1e-12 || pp > 1e-12 ||
        (!equal && pq <= 1e-12) || (equal && pq > 1e-12)) {
      ++violations;
    }
  }
  std::vector<double> a{0.25, 0.75, 0, 0}, b{0, 0, 0.5, 0.5};
  const double disjoint = js_divergence(a, b);
  const bool ok = violations == 0 && std::abs(disjoint - std::numbers::ln2) <= 1e-12;
  return {ok, fmt("%.0f violations over 1000 pairs, max %.4f, disjoint |diff| = %.1e", violations, max_js,
                  std::abs(disjoint - std::numbers::ln2))};
}

// Five planted-rule spaces with 6..10 packages and success rates in
// [0.05, 0.20].
std::vector<Benchmark> low_rate_suite() {
  const std::vector<std::vector<std::size_t>> domains = {
      {3, 3, 3, 3, 3, 3},
      {3, 3, 3, 3, 2, 2, 2},
      {3, 3, 3, 2, 2, 2, 2, 2},
      {3, 3, 2, 2, 2, 2, 2, 2, 2},
      {3, 2, 2, 2, 2, 2, 2, 2, 2, 2},
  };
  const std::vector<double> rates = {0.06, 0.08, 0.10, 0.13, 0.16};
  std::vector<Benchmark> out;
  for (std::size_t k = 0; k < domains.size(); ++k) {
    BenchmarkSpec spec;
    spec.packages = domains[k].size();
    spec.domain_sizes = domains[k];
    spec.target_rate = rates[k];
    spec.seed = 1000 + k;
    out.push_back(generate_benchmark(spec));
  }
  return out;
}

std::string suite_check(const std::vector<Benchmark>& suite) {
  for (const auto& b : suite) {
    if (b.space < 500 || b.success_rate() < 0.05 || b.success_rate() > 0.20 || b.graph->size() < 6 ||
        b.graph->size() > 10) {
      return "suite member outside 6-10 packages / rate 0.05-0.20 / >= 500 configurations";
    }
  }
  return {};
}

Verdict directional_precision() {
  auto suite = low_rate_suite();
  if (auto bad = suite_check(suite); !bad.empty()) return {false, bad};
  double bayes = 0, random = 0;
  std::string per_graph;
  for (const auto& b : suite) {
    SyntheticOracle oracle(b.graph, b.rules, 42);
    SweepOptions opts;
    opts.strategies = {Strategy::kBayesian, Strategy::kRandom};
    opts.sample_sizes = {100};
    opts.repetitions = 10;
    auto reps = sweep(oracle, b.graph, b.good, opts);
    bayes += reps[0].mean_p[0] / suite.size();
    random += reps[1].mean_p[0] / suite.size();
    per_graph += fmt(" %.2f/%.2f", reps[0].mean_p[0], reps[1].mean_p[0]);
  }
  return {bayes >= 2.0 * random,
          fmt("bayesian %.3f vs random %.3f (ratio %.2f); per graph:", bayes, random, bayes / random) + per_graph};
}

Verdict directional_recall() {
  BenchmarkSpec spec;
  spec.packages = 5;
  spec.domain_sizes = {5, 5, 2, 2, 2};
  spec.target_rate = 0.15;
  spec.seed = 7;
  Benchmark b = generate_benchmark(spec);
  if (b.space != 200 || b.success_rate() < 0.10 || b.success_rate() > 0.20) {
    return {false, "benchmark outside 200 configurations / 10-20% good"};
  }
  SyntheticOracle oracle(b.graph, b.rules, 42);
  SweepOptions opts;
  opts.strategies = {Strategy::kBayesian, Strategy::kRandom};
  opts.sample_sizes = {20};
  opts.repetitions = 10;
  opts.run_to_exhaustion = true;
  auto reps = sweep(oracle, b.graph, b.good, opts);
  auto mean = [](const std::vector<std::size_t>& v) {
    double s = 0;
    for (auto x : v) s += static_cast<double>(x);
    return s / static_cast<double>(v.size());
  };
  const double bayes = mean(reps[0].samples_to_full_recall);
  const double random = mean(reps[1].samples_to_full_recall);
  return {bayes <= 0.6 * random,
          fmt("%.0f good; samples to full recall bayesian %.1f vs random %.1f (ratio %.2f)",
              static_cast<double>(b.good), bayes, random, bayes / random)};
}

Verdict strategy_ordering() {
  auto suite = low_rate_suite();
  if (auto bad = suite_check(suite); !bad.empty()) return {false, bad};
  double bayes = 0, crowd = 0, random = 0;
  const double runs = static_cast<double>(suite.size() * 10);
  for (const auto& b : suite) {
    SyntheticOracle oracle(b.graph, b.rules, 42);
    Dataset d = enumerate_dataset(oracle, b.graph);
    for (std::uint64_t seed = 42; seed < 52; ++seed) {
      bayes += auprc_experiment(d, Strategy::kBayesian, seed).auprc / runs;
      crowd += auprc_experiment(d, Strategy::kCrowd, seed).auprc / runs;
      random += auprc_experiment(d, Strategy::kRandom, seed).auprc / runs;
    }
  }
  const bool ok = bayes - crowd >= -0.02 && crowd - random >= -0.02 && bayes - random >= 0.05;
  return {ok, fmt("mean AUPRC bayesian %.3f, crowd %.3f, random %.3f", bayes, crowd, random)};
}

Verdict random_baseline() {
  BenchmarkSpec spec;
  spec.packages = 7;
  spec.domain_sizes = {3, 3, 3, 3, 2, 2, 2};
  spec.target_rate = 0.3;
  spec.seed = 5;
  Benchmark b = generate_benchmark(spec);
  SyntheticOracle oracle(b.graph, b.rules, 42);
  Dataset d = enumerate_dataset(oracle, b.graph);
  const double p = b.success_rate();
  SweepOptions opts;
  opts.strategies = {Strategy::kRandom};
  opts.sample_sizes = {20, 40, 60, 80, 100};
  opts.repetitions = 10;
  auto rep = sweep_experiment(d, opts).front();
  double worst_z = 0;
  for (std::size_t s = 0; s < opts.sample_sizes.size(); ++s) {
    const double n = static_cast<double>(opts.sample_sizes[s] * opts.repetitions);
    const double sigma = std::sqrt(p * (1 - p) / n);
    worst_z = std::max(worst_z, std::abs(rep.mean_p[s] - p) / sigma);
  }
  return {worst_z <= 3.0, fmt("success rate %.3f, worst deviation %.2f sigma", p, worst_z)};
}

Verdict simulation_accounting() {
  std::vector<std::string> problems;
  // Diamond: D depends on B and C, both depend on A.
  {
    auto g = make_graph({"D", "B", "C", "A"}, {1, 1, 1, 1}, {{"D", "B"}, {"D", "C"}, {"B", "A"}, {"C", "A"}});
    std::vector<Configuration> one{cfg({0, 0, 0, 0})};
    BuildDag dag = build_dag(*g, one);
    SimReport rep = simulate(dag, [](std::size_t) { return true; }, 2);
    if (dag.units.size() != 4) problems.push_back("diamond unit count");
    if (rep.makespan != 3.0) problems.push_back("diamond makespan " + std::to_string(rep.makespan));
    if (rep.attempted + rep.skipped != dag.units.size()) problems.push_back("diamond accounting");
  }
  // Chain root -> mid -> leaf across several configurations; each failure
  // must skip exactly the transitive dependents.
  {
    auto g = make_graph({"root", "mid", "leaf", "aux"}, {2, 2, 3, 2},
                        {{"root", "mid"}, {"mid", "leaf"}, {"root", "aux"}});
    auto configs = all_configs(*g);
    BuildDag dag = build_dag(*g, configs);
    std::vector<std::vector<std::size_t>> dependents(dag.units.size());
    for (std::size_t u = 0; u < dag.units.size(); ++u)
      for (auto d : dag.units[u].deps) dependents[d].push_back(u);
    for (std::size_t fail = 0; fail < dag.units.size(); ++fail) {
      for (std::size_t workers : {1, 3}) {
        SimReport rep = simulate(dag, [fail](std::size_t u) { return u != fail; }, workers);
        std::vector<bool> closure(dag.units.size(), false);
        std::vector<std::size_t> stack{fail};
        while (!stack.empty()) {
          auto u = stack.back();
          stack.pop_back();
          for (auto v : dependents[u])
            if (!closure[v]) closure[v] = true, stack.push_back(v);
        }
        std::size_t expect_skipped = 0;
        for (std::size_t u = 0; u < dag.units.size(); ++u) {
          const NodeStatus want = u == fail ? NodeStatus::kFailed
                                  : closure[u] ? NodeStatus::kSkipped
                                               : NodeStatus::kSucceeded;
          expect_skipped += closure[u] ? 1 : 0;
          if (rep.status[u] != want) {
            problems.push_back("status of unit " + std::to_string(u) + " with unit " + std::to_string(fail) +
                               " failing");
          }
        }
        if (rep.attempted + rep.skipped != dag.units.size() || rep.skipped != expect_skipped ||
            rep.failed != 1) {
          problems.push_back("accounting with unit " + std::to_string(fail) + " failing");
        }
      }
    }
  }
  std::string detail = problems.empty() ? "diamond makespan 3, closure exact for every single failure"
                                        : problems.front() + fmt(" (+%.0f more)", problems.size() - 1.0);
  return {problems.empty(), detail};
}

Verdict importance_recovery() {
  auto g = make_graph({"app", "A", "B", "C", "D"}, {4, 4, 4, 4, 4},
                      {{"app", "A"}, {"A", "B"}, {"app", "C"}, {"C", "D"}});
  PlantedRuleSet rules;
  rules.forbidden.push_back({1, 1, 2, 0});  // A=v2 with B=v1
  int hits = 0;
  std::string ranks;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticOracle oracle(g, rules, seed);
    Rng rng(seed, "records");
    Dataset d = sample_dataset(oracle, g, 400, rng);
    FactorModel model = FactorModel::fit(d.records(), g, 1.0);
    auto top = importance_ranking(model, 2);
    bool hit = false;
    for (const auto& e : top) hit = hit || e.target == "A+B";
    hits += hit ? 1 : 0;
    ranks += " " + top.front().target;
  }
  return {hits >= 9, fmt("edge A+B in top 2 for %.0f of 10 seeds; leaders:", hits) + ranks};
}

Verdict cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "buildtune-acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string gen = (root / "gen").string();
  std::ostringstream sink, errs;
  if (cli::dispatch({"gen-synthetic", "--out-dir", gen, "--packages", "7", "--domains", "3,3,3,2,2,2,2",
                     "--target-rate", "0.12", "--enumerate", "--seed", "3"},
                    sink, errs) != 0) {
    return {false, "gen-synthetic failed: " + errs.str()};
  }
  const std::string graph = gen + "/graph.json", rules = gen + "/rules.json", data = gen + "/dataset.jsonl";
  using Args = std::vector<std::string>;
  const std::vector<std::pair<std::string, Args>> cases = {
      {"run", {"run", "--graph", graph, "--oracle", "synthetic:" + rules, "--budget", "60", "--seed", "7"}},
      {"run-dataset", {"run", "--graph", graph, "--oracle", "dataset:" + data, "--strategy", "crowd", "--budget", "40"}},
      {"eval", {"eval", "--dataset", data, "--repetitions", "3"}},
      {"auprc", {"auprc", "--dataset", data, "--repetitions", "2", "--cutoffs", "0.5,1"}},
      {"importance", {"importance", "--dataset", data}},
      {"heatmap", {"heatmap", "--dataset", data, "--out-dir", "@dir"}},
      {"simulate", {"simulate", "--graph", graph, "--samples", "30", "--rules", rules, "--workers", "3",
                    "--latency", "lognormal"}},
      {"gen-synthetic", {"gen-synthetic", "--out-dir", "@dir", "--packages", "6", "--target-rate", "0.2",
                         "--dataset-size", "50"}},
      {"summary", {"summary", "--dataset", data, "--format", "text"}},
  };
  auto snapshot = [](const fs::path& p) {
    std::string all;
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) files.push_back(e.path());
    } else {
      files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      all += fs::relative(f, p.parent_path()).string().substr(p.filename().string().size()) + "\n" +
             std::string(std::istreambuf_iterator<char>(in), {});
    }
    return all;
  };
  std::vector<std::string> differing;
  for (const auto& [name, args] : cases) {
    std::string outputs[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path target = root / (name + "-" + std::to_string(k));
      Args a = args;
      bool dir = false;
      for (auto& s : a) {
        if (s == "@dir") s = target.string(), dir = true;
      }
      if (!dir) a.insert(a.end(), {"--out", target.string()});
      std::ostringstream out, err;
      if (cli::dispatch(a, out, err) != 0) return {false, name + " failed: " + err.str()};
      outputs[k] = snapshot(target) + out.str();
    }
    if (outputs[0] != outputs[1] || outputs[0].size() < 10) differing.push_back(name);
  }
  fs::remove_all(root);
  std::string detail = fmt("%.0f subcommand invocations compared", cases.size());
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty(), detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Verdict()> check;
  };
  const std::vector<Criterion> criteria = {
      {"ei-exactness", 1, ei_exactness},
      {"auprc-exactness", 1, auprc_exactness},
      {"js-properties", 1, js_properties},
      {"directional-precision", 120, directional_precision},
      {"directional-recall", 60, directional_recall},
      {"strategy-ordering", 120, strategy_ordering},
      {"random-baseline", 30, random_baseline},
      {"simulation-accounting", 1, simulation_accounting},
      {"importance-recovery", 30, importance_recovery},
      {"cli-determinism", 600, cli_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.limit_s) {
      v.pass = false;
      v.detail += fmt(" [over the %.0f s limit]", c.limit_s);
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s %-22s %6.2fs  %s\n", v.pass ? "PASS" : "FAIL", c.name, secs, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
