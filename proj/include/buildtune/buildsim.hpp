#pragma once

// Farmer-worker build simulation over a deduplicated build DAG, and synthetic
// ground-truth oracles with planted pairwise incompatibilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "buildtune/configspace.hpp"
#include "buildtune/dataset.hpp"
#include "buildtune/rng.hpp"
#include "buildtune/sampler.hpp"

namespace buildtune {

// ---------------------------------------------------------------------------
// Planted rules

struct PlantedRule {
  PackageIndex parent = 0;
  VersionIndex parent_version = 0;
  PackageIndex child = 0;
  VersionIndex child_version = 0;

  friend auto operator<=>(const PlantedRule&, const PlantedRule&) = default;
};

struct PlantedRuleSet {
  std::vector<PlantedRule> forbidden;
  // Probability that a configuration fails regardless of the rules.
  double noise = 0.0;
  // Pins the noise draws; otherwise the oracle's own seed is used.
  std::optional<std::uint64_t> noise_seed;
};

inline void validate_rules(const DependencyGraph& graph, const PlantedRuleSet& rules) {
  if (!(rules.noise >= 0.0 && rules.noise <= 1.0)) throw DataError("noise must lie in [0, 1]");
  for (const auto& r : rules.forbidden) {
    if (r.parent >= graph.size() || r.child >= graph.size() || !graph.find_edge(r.parent, r.child)) {
      throw DataError("rule does not reference an edge of the graph");
    }
    if (r.parent_version >= graph.domain_size(r.parent) || r.child_version >= graph.domain_size(r.child)) {
      throw DataError("rule references an unknown version");
    }
  }
}

inline Json rules_to_json(const DependencyGraph& graph, const PlantedRuleSet& rules) {
  Json arr = Json::array();
  for (const auto& r : rules.forbidden) {
    arr.push_back({{"parent", graph.name(r.parent)},
                   {"parent_version", graph.domain(r.parent)[r.parent_version]},
                   {"child", graph.name(r.child)},
                   {"child_version", graph.domain(r.child)[r.child_version]}});
  }
  Json doc{{"forbidden", arr}, {"noise", rules.noise}};
  if (rules.noise_seed) doc["noise_seed"] = *rules.noise_seed;
  return doc;
}

inline PlantedRuleSet rules_from_json(const DependencyGraph& graph, const Json& doc) {
  try {
    PlantedRuleSet rules;
    rules.noise = doc.value("noise", 0.0);
    if (doc.contains("noise_seed")) rules.noise_seed = doc["noise_seed"].get<std::uint64_t>();
    for (const auto& r : doc.at("forbidden")) {
      auto pkg = [&](const char* key) {
        auto i = graph.find_package(r.at(key).get<std::string>());
        if (!i) throw DataError("rule names unknown package '" + r.at(key).get<std::string>() + "'");
        return *i;
      };
      PackageIndex p = pkg("parent"), c = pkg("child");
      auto ver = [&](PackageIndex i, const char* key) {
        auto v = graph.find_version(i, r.at(key).get<std::string>());
        if (!v) throw DataError("rule names unknown version '" + r.at(key).get<std::string>() + "'");
        return *v;
      };
      rules.forbidden.push_back({p, ver(p, "parent_version"), c, ver(c, "child_version")});
    }
    validate_rules(graph, rules);
    return rules;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed rules document: ") + e.what());
  }
}

inline PlantedRuleSet load_rules(const DependencyGraph& graph, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rules file '" + path + "'");
  try {
    return rules_from_json(graph, Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw DataError("rules file '" + path + "': " + e.what());
  }
}

// Per-edge lookup of forbidden version pairs.
class RuleIndex {
 public:
  RuleIndex(const DependencyGraph& graph, const PlantedRuleSet& rules) : graph_(&graph) {
    validate_rules(graph, rules);
    cells_.resize(graph.edges().size());
    for (std::size_t e = 0; e < graph.edges().size(); ++e) {
      const Edge& edge = graph.edges()[e];
      cells_[e].assign(graph.domain_size(edge.parent) * graph.domain_size(edge.child), false);
    }
    for (const auto& r : rules.forbidden) {
      std::size_t e = *graph.find_edge(r.parent, r.child);
      cells_[e][r.parent_version * graph.domain_size(r.child) + r.child_version] = true;
    }
  }

  bool forbidden(std::size_t edge, VersionIndex parent_v, VersionIndex child_v) const {
    return cells_[edge][parent_v * graph_->domain_size(graph_->edges()[edge].child) + child_v];
  }

  bool violates(const Configuration& config) const {
    for (std::size_t e = 0; e < cells_.size(); ++e) {
      const Edge& edge = graph_->edges()[e];
      if (forbidden(e, config.assignment[edge.parent], config.assignment[edge.child])) return true;
    }
    return false;
  }

 private:
  const DependencyGraph* graph_;
  std::vector<std::vector<bool>> cells_;
};

// Deterministic uniform in [0,1) keyed on (seed, digest).
inline double keyed_uniform(std::uint64_t seed, const ConfigDigest& d) {
  std::uint64_t k = 0;
  for (int i = 0; i < 8; ++i) k = (k << 8) | d.bytes[i];
  return static_cast<double>(mix64(seed ^ mix64(k)) >> 11) * 0x1.0p-53;
}

// Ground truth: a configuration builds iff it activates no forbidden pair and
// does not draw a noise failure. Noise is a pure function of (seed, digest).
class SyntheticOracle : public BuildOracle {
 public:
  SyntheticOracle(std::shared_ptr<const DependencyGraph> graph, PlantedRuleSet rules, std::uint64_t seed)
      : graph_(std::move(graph)),
        rules_(std::move(rules)),
        index_(*graph_, rules_),
        digester_(*graph_),
        seed_(stream_seed(rules_.noise_seed.value_or(seed), "noise")) {}

  bool evaluate(const Configuration& config) const override {
    if (!is_valid_configuration(*graph_, config)) throw DataError("configuration does not match graph");
    if (index_.violates(config)) return false;
    if (rules_.noise > 0.0 && keyed_uniform(seed_, digester_(config)) < rules_.noise) return false;
    return true;
  }

  // Every good configuration, in enumeration order. Spaces up to 10^6.
  std::vector<Configuration> enumerate_good() const {
    std::vector<Configuration> out;
    for (auto& c : enumerate_configurations(*graph_, kExhaustiveLimit)) {
      if (evaluate(c)) out.push_back(std::move(c));
    }
    return out;
  }

  std::size_t good_count() const {
    std::size_t n = 0;
    for (const auto& c : enumerate_configurations(*graph_, kExhaustiveLimit)) n += evaluate(c) ? 1 : 0;
    return n;
  }

  const DependencyGraph& graph() const noexcept { return *graph_; }
  const PlantedRuleSet& rules() const noexcept { return rules_; }
  const RuleIndex& index() const noexcept { return index_; }

 private:
  std::shared_ptr<const DependencyGraph> graph_;
  PlantedRuleSet rules_;
  RuleIndex index_;
  ConfigDigester digester_;
  std::uint64_t seed_;
};

inline SyntheticOracle synthetic_oracle(std::shared_ptr<const DependencyGraph> graph, PlantedRuleSet rules,
                                        std::uint64_t seed) {
  return SyntheticOracle(std::move(graph), std::move(rules), seed);
}

// Labels every configuration of the space with the oracle.
inline Dataset enumerate_dataset(const SyntheticOracle& oracle, std::shared_ptr<const DependencyGraph> graph) {
  Dataset d(graph);
  for (auto& c : enumerate_configurations(*graph, kExhaustiveLimit)) {
    bool built = oracle.evaluate(c);
    d.add({std::move(c), built});
  }
  return d;
}

// `count` distinct uniformly drawn configurations labelled by the oracle.
inline Dataset sample_dataset(const SyntheticOracle& oracle, std::shared_ptr<const DependencyGraph> graph,
                              std::size_t count, Rng& rng) {
  auto total = space_size_u64(*graph);
  if (total && *total < count) throw CandidateExhaustedError("space smaller than requested sample");
  Dataset d(graph);
  const ConfigDigester digester(*graph);
  std::unordered_set<ConfigDigest, ConfigDigestHash> seen;
  while (d.size() < count) {
    Configuration c = random_configuration(*graph, rng);
    if (!seen.insert(digester(c)).second) continue;
    bool built = oracle.evaluate(c);
    d.add({std::move(c), built});
  }
  return d;
}

// ---------------------------------------------------------------------------
// Benchmark generation

struct BenchmarkSpec {
  std::size_t packages = 6;
  // Explicit per-package domain sizes; when empty, sizes are drawn from
  // [min_domain, max_domain].
  std::vector<std::size_t> domain_sizes;
  std::size_t min_domain = 2;
  std::size_t max_domain = 4;
  // Fraction of edge version-pair cells that may be forbidden.
  double rule_density = 1.0;
  double target_rate = 0.1;
  double noise = 0.0;
  std::uint64_t seed = 42;
  std::size_t max_retries = 64;
  // Relative tolerance on the achieved success rate.
  double tolerance = 0.2;
};

struct Benchmark {
  std::shared_ptr<const DependencyGraph> graph;
  PlantedRuleSet rules;
  std::size_t space = 0;
  std::size_t good = 0;

  double success_rate() const { return space == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(space); }
};

class InfeasibleTargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string version_label(std::size_t k) {
  return std::to_string(1 + k / 4) + "." + std::to_string(k % 4) + ".0";
}

// Random tree graph (package i > 0 depends from a uniformly chosen earlier
// package) plus forbidden pairs added greedily, in random order, while the
// exact success rate stays above target * (1 - tolerance); done once it drops
// to target * (1 + tolerance) or below. Retries with a fresh graph otherwise.
inline Benchmark generate_benchmark(const BenchmarkSpec& spec) {
  if (spec.packages < 1) throw std::invalid_argument("benchmark needs at least one package");
  if (!spec.domain_sizes.empty() && spec.domain_sizes.size() != spec.packages) {
    throw std::invalid_argument("domain size list does not match package count");
  }
  if (spec.min_domain < 1 || spec.max_domain < spec.min_domain) {
    throw std::invalid_argument("invalid domain size range");
  }
  if (!(spec.target_rate > 0.0 && spec.target_rate <= 1.0)) {
    throw std::invalid_argument("target success rate must lie in (0, 1]");
  }
  Rng rng(spec.seed, "benchmark");
  const double low = spec.target_rate * (1.0 - spec.tolerance);
  const double high = spec.target_rate * (1.0 + spec.tolerance);
  for (std::size_t attempt = 0; attempt < spec.max_retries; ++attempt) {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> domains;
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < spec.packages; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "pkg%02zu", i);
      names.emplace_back(i == 0 ? std::string("app") : std::string(buf));
      std::size_t m = spec.domain_sizes.empty()
                          ? spec.min_domain + rng.uniform_index(spec.max_domain - spec.min_domain + 1)
                          : spec.domain_sizes[i];
      std::vector<std::string> dom;
      for (std::size_t k = 0; k < m; ++k) dom.push_back(version_label(k));
      domains.push_back(std::move(dom));
      if (i > 0) edges.push_back({rng.uniform_index(i), i});
    }
    auto graph = std::make_shared<const DependencyGraph>(std::move(names), std::move(domains), std::move(edges), 0);
    if (auto v = validate_graph(*graph); !v) throw std::invalid_argument(v.message);
    auto configs = enumerate_configurations(*graph, kExhaustiveLimit);
    const std::size_t space = configs.size();

    Benchmark bench{graph, {{}, spec.noise, std::nullopt}, space, 0};
    if (spec.noise > 0.0) bench.rules.noise_seed = spec.seed;
    if (spec.target_rate >= 1.0 && spec.noise == 0.0) {
      bench.good = space;
      return bench;
    }
    // Cells in random order.
    std::vector<PlantedRule> cells;
    for (const Edge& e : graph->edges()) {
      for (VersionIndex u = 0; u < graph->domain_size(e.parent); ++u) {
        for (VersionIndex w = 0; w < graph->domain_size(e.child); ++w) cells.push_back({e.parent, u, e.child, w});
      }
    }
    rng.shuffle(cells);
    const auto max_rules = static_cast<std::size_t>(std::ceil(spec.rule_density * static_cast<double>(cells.size())));

    // Noise is independent of the rules; apply it up front.
    SyntheticOracle noise_only(graph, {{}, spec.noise, spec.seed}, spec.seed);
    std::vector<bool> alive(space);
    std::size_t good = 0;
    for (std::size_t k = 0; k < space; ++k) {
      alive[k] = spec.noise == 0.0 || noise_only.evaluate(configs[k]);
      good += alive[k] ? 1 : 0;
    }
    auto rate = [&](std::size_t g) { return static_cast<double>(g) / static_cast<double>(space); };
    for (const auto& cell : cells) {
      if (rate(good) <= high || bench.rules.forbidden.size() >= max_rules) break;
      std::size_t kill = 0;
      for (std::size_t k = 0; k < space; ++k) {
        if (alive[k] && configs[k].assignment[cell.parent] == cell.parent_version &&
            configs[k].assignment[cell.child] == cell.child_version) {
          ++kill;
        }
      }
      if (kill == 0 || rate(good - kill) < low) continue;
      for (std::size_t k = 0; k < space; ++k) {
        if (configs[k].assignment[cell.parent] == cell.parent_version &&
            configs[k].assignment[cell.child] == cell.child_version) {
          alive[k] = false;
        }
      }
      good -= kill;
      bench.rules.forbidden.push_back(cell);
    }
    if (rate(good) >= low && rate(good) <= high) {
      std::sort(bench.rules.forbidden.begin(), bench.rules.forbidden.end());
      bench.good = good;
      return bench;
    }
  }
  throw InfeasibleTargetError("could not reach the target success rate within " +
                              std::to_string(spec.max_retries) + " attempts");
}

// ---------------------------------------------------------------------------
// Build DAG

struct BuildUnit {
  PackageIndex package = 0;
  VersionIndex version = 0;
  // Merkle digest over (package, version, dependency-unit digests).
  ConfigDigest digest;
  std::vector<std::size_t> deps;
};

struct BuildDag {
  std::vector<BuildUnit> units;
  // origin[k] is the root unit of input configuration k.
  std::vector<std::size_t> origin;
};

// One unit per distinct (package, version, dependency subtree). Identical
// subtrees across configurations collapse into a single unit.
inline BuildDag build_dag(const DependencyGraph& graph, std::span<const Configuration> configs) {
  std::vector<std::vector<PackageIndex>> children(graph.size());
  for (const Edge& e : graph.edges()) children[e.parent].push_back(e.child);
  for (auto& c : children) {
    std::sort(c.begin(), c.end(), [&](auto a, auto b) { return graph.name(a) < graph.name(b); });
  }
  // Post-order from the root: dependencies before dependents.
  std::vector<PackageIndex> order;
  {
    std::vector<int> state(graph.size(), 0);
    std::function<void(PackageIndex)> visit = [&](PackageIndex u) {
      if (state[u]) return;
      state[u] = 1;
      for (auto c : children[u]) visit(c);
      order.push_back(u);
    };
    visit(graph.root());
  }
  BuildDag dag;
  std::unordered_map<ConfigDigest, std::size_t, ConfigDigestHash> index;
  std::vector<std::size_t> unit_of(graph.size());
  for (const auto& config : configs) {
    if (!is_valid_configuration(graph, config)) throw DataError("configuration does not match graph");
    for (PackageIndex p : order) {
      const VersionIndex v = config.assignment[p];
      std::string buf;
      detail::append_field(buf, graph.name(p));
      detail::append_field(buf, graph.domain(p)[v]);
      detail::append_u64_le(buf, children[p].size());
      std::vector<std::size_t> deps;
      for (PackageIndex c : children[p]) {
        deps.push_back(unit_of[c]);
        const auto& d = dag.units[unit_of[c]].digest.bytes;
        buf.append(reinterpret_cast<const char*>(d.data()), d.size());
      }
      ConfigDigest d = detail::sha256(buf);
      auto [it, inserted] = index.emplace(d, dag.units.size());
      if (inserted) dag.units.push_back({p, v, d, std::move(deps)});
      unit_of[p] = it->second;
    }
    dag.origin.push_back(unit_of[graph.root()]);
  }
  return dag;
}

// ---------------------------------------------------------------------------
// Simulation

enum class NodeStatus { kPending, kReady, kBuilding, kSucceeded, kFailed, kSkipped };

inline const char* to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::kPending: return "pending";
    case NodeStatus::kReady: return "ready";
    case NodeStatus::kBuilding: return "building";
    case NodeStatus::kSucceeded: return "succeeded";
    case NodeStatus::kFailed: return "failed";
    case NodeStatus::kSkipped: return "skipped";
  }
  return "unknown";
}

struct BuildEvent {
  std::size_t unit = 0;
  double start = 0.0;
  double finish = 0.0;
  bool succeeded = false;
};

struct SimReport {
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  double makespan = 0.0;
  std::vector<NodeStatus> status;
  std::vector<BuildEvent> events;  // in start order
};

// Discrete-event farmer-worker loop. The farmer hands ready units to free
// workers from a FIFO queue (units becoming ready together enter in digest
// order); on completion a success may release dependents, a failure marks
// every transitive dependent skipped. Single-threaded and deterministic.
inline SimReport simulate(const BuildDag& dag, const std::function<bool(std::size_t)>& outcome,
                          std::size_t workers,
                          const std::function<double(std::size_t)>& latency = [](std::size_t) { return 1.0; }) {
  if (workers < 1) throw std::invalid_argument("need at least one worker");
  const std::size_t n = dag.units.size();
  std::vector<std::vector<std::size_t>> dependents(n);
  std::vector<std::size_t> waiting(n, 0);
  for (std::size_t u = 0; u < n; ++u) {
    waiting[u] = dag.units[u].deps.size();
    for (auto d : dag.units[u].deps) dependents[d].push_back(u);
  }
  SimReport rep;
  rep.status.assign(n, NodeStatus::kPending);
  auto by_digest = [&](std::size_t a, std::size_t b) { return dag.units[a].digest < dag.units[b].digest; };

  std::deque<std::size_t> ready;
  auto enqueue = [&](std::vector<std::size_t> batch) {
    std::sort(batch.begin(), batch.end(), by_digest);
    for (auto u : batch) {
      rep.status[u] = NodeStatus::kReady;
      ready.push_back(u);
    }
  };
  {
    std::vector<std::size_t> initial;
    for (std::size_t u = 0; u < n; ++u) {
      if (waiting[u] == 0) initial.push_back(u);
    }
    enqueue(std::move(initial));
  }

  struct Running {
    double finish;
    std::size_t unit;
    std::size_t event;
  };
  auto later = [&](const Running& a, const Running& b) {
    if (a.finish != b.finish) return a.finish > b.finish;
    return by_digest(b.unit, a.unit);
  };
  std::priority_queue<Running, std::vector<Running>, decltype(later)> running(later);

  double now = 0.0;
  for (;;) {
    while (running.size() < workers && !ready.empty()) {
      std::size_t u = ready.front();
      ready.pop_front();
      rep.status[u] = NodeStatus::kBuilding;
      const double dt = latency(u);
      if (!(dt >= 0.0)) throw std::invalid_argument("latency must be non-negative");
      rep.events.push_back({u, now, now + dt, false});
      running.push({now + dt, u, rep.events.size() - 1});
      ++rep.attempted;
    }
    if (running.empty()) break;
    now = running.top().finish;
    std::vector<std::size_t> released;
    while (!running.empty() && running.top().finish == now) {
      Running r = running.top();
      running.pop();
      const bool ok = outcome(r.unit);
      rep.events[r.event].succeeded = ok;
      rep.makespan = std::max(rep.makespan, now);
      if (ok) {
        rep.status[r.unit] = NodeStatus::kSucceeded;
        ++rep.succeeded;
        for (auto d : dependents[r.unit]) {
          if (rep.status[d] == NodeStatus::kPending && --waiting[d] == 0) released.push_back(d);
        }
      } else {
        rep.status[r.unit] = NodeStatus::kFailed;
        ++rep.failed;
        std::vector<std::size_t> stack(dependents[r.unit]);
        while (!stack.empty()) {
          std::size_t d = stack.back();
          stack.pop_back();
          if (rep.status[d] != NodeStatus::kPending) continue;
          rep.status[d] = NodeStatus::kSkipped;
          ++rep.skipped;
          for (auto dd : dependents[d]) stack.push_back(dd);
        }
      }
    }
    enqueue(std::move(released));
  }
  return rep;
}

// Unit-level outcome for planted rules: a unit fails when its own version and
// one of its direct dependencies' versions form a forbidden pair, or when it
// draws a noise failure.
inline std::function<bool(std::size_t)> rule_outcome(const BuildDag& dag, const DependencyGraph& graph,
                                                     const PlantedRuleSet& rules, std::uint64_t seed) {
  auto index = std::make_shared<RuleIndex>(graph, rules);
  const std::uint64_t noise_seed = stream_seed(seed, "unit-noise");
  return [&dag, &graph, index, noise = rules.noise, noise_seed](std::size_t u) {
    const BuildUnit& unit = dag.units[u];
    for (auto d : unit.deps) {
      const BuildUnit& dep = dag.units[d];
      auto e = graph.find_edge(unit.package, dep.package);
      if (e && index->forbidden(*e, unit.version, dep.version)) return false;
    }
    return !(noise > 0.0 && keyed_uniform(noise_seed, unit.digest) < noise);
  };
}

// Log-normal latencies (median 1) keyed on the unit digest.
inline std::function<double(std::size_t)> lognormal_latency(const BuildDag& dag, double sigma, std::uint64_t seed) {
  const std::uint64_t s = stream_seed(seed, "latency");
  return [&dag, sigma, s](std::size_t u) {
    const double u1 = std::max(keyed_uniform(s, dag.units[u].digest), 0x1.0p-53);
    const double u2 = keyed_uniform(mix64(s), dag.units[u].digest);
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    return std::exp(sigma * z);
  };
}

inline Json sim_report_to_json(const BuildDag& dag, const DependencyGraph& graph, const SimReport& rep) {
  Json nodes = Json::array();
  std::vector<const BuildEvent*> event_of(dag.units.size(), nullptr);
  for (const auto& e : rep.events) event_of[e.unit] = &e;
  for (std::size_t u = 0; u < dag.units.size(); ++u) {
    const auto& unit = dag.units[u];
    Json j{{"package", graph.name(unit.package)},
           {"version", graph.domain(unit.package)[unit.version]},
           {"digest", unit.digest.hex()},
           {"status", to_string(rep.status[u])}};
    if (event_of[u]) {
      j["start"] = event_of[u]->start;
      j["finish"] = event_of[u]->finish;
    }
    nodes.push_back(std::move(j));
  }
  return Json{{"unique", dag.units.size()},
              {"attempted", rep.attempted},
              {"succeeded", rep.succeeded},
              {"failed", rep.failed},
              {"skipped", rep.skipped},
              {"failed_or_skipped", rep.failed + rep.skipped},
              {"makespan", rep.makespan},
              {"nodes", nodes}};
}

}  // namespace buildtune
