#pragma once

// Adaptive sampling loop: bootstrap with uniform draws, then repeatedly score
// unevaluated candidates with the current model, build the best one, and fold
// the outcome back into the model.

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "buildtune/configspace.hpp"
#include "buildtune/dataset.hpp"
#include "buildtune/history.hpp"
#include "buildtune/rng.hpp"
#include "buildtune/surrogate.hpp"

namespace buildtune {

enum class Strategy { kBayesian, kCrowd, kRandom };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kBayesian: return "bayesian";
    case Strategy::kCrowd: return "crowd";
    case Strategy::kRandom: return "random";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& name) {
  if (name == "bayesian") return Strategy::kBayesian;
  if (name == "crowd") return Strategy::kCrowd;
  if (name == "random") return Strategy::kRandom;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

struct CandidateMode {
  enum class Kind { kExhaustive, kPool };
  Kind kind = Kind::kExhaustive;
  std::size_t pool_size = 1000;

  static CandidateMode exhaustive() { return {}; }
  static CandidateMode pool(std::size_t k) { return {Kind::kPool, k}; }
};

// Spaces up to this size are enumerated in exhaustive mode.
inline constexpr std::uint64_t kExhaustiveLimit = 1'000'000;

struct SamplerConfig {
  Strategy strategy = Strategy::kBayesian;
  std::size_t bootstrap_size = 20;
  std::size_t budget = 0;
  CandidateMode candidates;
  std::uint64_t seed = 42;
  double smoothing = FactorModel::kDefaultSmoothing;
  double crowd_floor = 0.0;

  void validate() const {
    if (bootstrap_size < 1) throw std::invalid_argument("bootstrap size must be at least 1");
    if (candidates.kind == CandidateMode::Kind::kPool && candidates.pool_size < 1) {
      throw std::invalid_argument("candidate pool size must be at least 1");
    }
    if (!(smoothing > 0.0)) throw std::invalid_argument("smoothing must be positive");
  }
};

// The expensive build step. evaluate() must be deterministic per
// configuration. Oracles backed by recorded data expose their finite
// candidate set; generative oracles return nullopt and candidates are drawn
// from the whole space.
class BuildOracle {
 public:
  virtual ~BuildOracle() = default;
  virtual bool evaluate(const Configuration& config) const = 0;
  virtual std::optional<std::span<const Configuration>> finite_candidates() const {
    return std::nullopt;
  }
};

// Replays a dataset: each recorded configuration evaluates to its recorded
// outcome, and the recorded configurations are the candidate set.
class DatasetOracle : public BuildOracle {
 public:
  explicit DatasetOracle(const Dataset& dataset) : dataset_(&dataset), digester_(dataset.graph()) {
    configs_.reserve(dataset.size());
    for (const auto& r : dataset.records()) configs_.push_back(r.config);
  }

  bool evaluate(const Configuration& config) const override {
    auto i = dataset_->find(digester_(config));
    if (!i) throw DataError("configuration is not part of the dataset");
    return dataset_->records()[*i].built;
  }

  std::optional<std::span<const Configuration>> finite_candidates() const override {
    return std::span<const Configuration>(configs_);
  }

 private:
  const Dataset* dataset_;
  ConfigDigester digester_;
  std::vector<Configuration> configs_;
};

class OracleError : public std::runtime_error {
 public:
  OracleError(std::size_t iteration, const std::string& what)
      : std::runtime_error("oracle failed at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

struct Candidate {
  Configuration config;
  ConfigDigest digest;
};

struct TraceEntry {
  std::size_t t = 0;
  ConfigDigest digest;
  double score = 0.0;
  bool built = false;
};

inline Json trace_entry_to_json(const TraceEntry& e) {
  return Json{{"t", e.t}, {"digest", e.digest.hex()}, {"score", e.score}, {"built", e.built}};
}

struct RunResult {
  ObservationHistory history;
  std::vector<TraceEntry> trace;
  FactorModel model;
};

// ---------------------------------------------------------------------------

// Draws bootstrap_size distinct configurations uniformly (rejecting digest
// collisions) and evaluates each.
inline ObservationHistory bootstrap(const BuildOracle& oracle, const DependencyGraph& graph,
                                    const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const ConfigDigester digester(graph);
  const auto finite = oracle.finite_candidates();
  if (finite) {
    // Distinct digests only; a finite list could in principle repeat.
    std::unordered_set<ConfigDigest, ConfigDigestHash> distinct;
    for (const auto& c : *finite) distinct.insert(digester(c));
    if (distinct.size() < cfg.bootstrap_size) {
      throw CandidateExhaustedError("only " + std::to_string(distinct.size()) +
                                    " distinct candidates for a bootstrap of " +
                                    std::to_string(cfg.bootstrap_size));
    }
  } else {
    auto total = space_size_u64(graph);
    if (total && *total < cfg.bootstrap_size) {
      throw CandidateExhaustedError("configuration space holds only " + std::to_string(*total) +
                                    " configurations");
    }
  }
  ObservationHistory history;
  while (history.size() < cfg.bootstrap_size) {
    Configuration config = finite ? (*finite)[rng.uniform_index(finite->size())]
                                  : random_configuration(graph, rng);
    ConfigDigest d = digester(config);
    if (history.contains(d)) continue;
    bool built;
    try {
      built = oracle.evaluate(config);
    } catch (const std::exception& e) {
      throw OracleError(0, e.what());
    }
    history.add({std::move(config), built}, d);
  }
  return history;
}

inline double strategy_score(Strategy strategy, const FactorModel& model, const Configuration& config,
                             double crowd_floor) {
  switch (strategy) {
    case Strategy::kBayesian: return expected_improvement(model, config).value;
    case Strategy::kCrowd: return crowd_score(model, config, crowd_floor).value;
    case Strategy::kRandom: return 0.0;
  }
  return 0.0;
}

struct Selection {
  std::size_t index = 0;  // into the candidate list
  double score = 0.0;
};

// Picks the unevaluated candidate with maximal score; exact ties (including
// the all-equal case, and every candidate under the random strategy) are
// broken uniformly with `rng`.
inline Selection select_next_index(const FactorModel& model, std::span<const Candidate> candidates,
                                   const ObservationHistory& history, Strategy strategy, Rng& rng,
                                   double crowd_floor = 0.0) {
  std::vector<std::size_t> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t open = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (history.contains(candidates[i].digest)) continue;
    ++open;
    const double s = strategy_score(strategy, model, candidates[i].config, crowd_floor);
    if (s > best_score) {
      best_score = s;
      best.clear();
      best.push_back(i);
    } else if (s == best_score) {
      best.push_back(i);
    }
  }
  if (best.empty()) throw CandidateExhaustedError("no unevaluated candidates");
  const std::size_t pick = best[rng.uniform_index(best.size())];
  if (strategy == Strategy::kRandom) best_score = 1.0 / static_cast<double>(open);
  return {pick, best_score};
}

inline Configuration select_next(const FactorModel& model, std::span<const Candidate> candidates,
                                 const ObservationHistory& history, Strategy strategy, Rng& rng,
                                 double crowd_floor = 0.0) {
  return candidates[select_next_index(model, candidates, history, strategy, rng, crowd_floor).index]
      .config;
}

inline std::vector<Candidate> make_candidates(const DependencyGraph& graph,
                                              std::span<const Configuration> configs) {
  const ConfigDigester digester(graph);
  std::vector<Candidate> out;
  out.reserve(configs.size());
  for (const auto& c : configs) out.push_back({c, digester(c)});
  return out;
}

// Algorithm loop. The history holds the bootstrap followed by at most
// `budget` selections; the loop stops early once every candidate has been
// evaluated. Deterministic given cfg.seed.
inline RunResult run(const BuildOracle& oracle, std::shared_ptr<const DependencyGraph> graph,
                     const SamplerConfig& cfg) {
  cfg.validate();
  Rng boot_rng(cfg.seed, "bootstrap");
  Rng tie_rng(cfg.seed, "tie-break");
  Rng pool_rng(cfg.seed, "pool");

  RunResult result{bootstrap(oracle, *graph, cfg, boot_rng), {},
                   FactorModel::fit({}, graph, cfg.smoothing)};
  result.model = FactorModel::fit(result.history.records(), graph, cfg.smoothing);
  const ConfigDigester digester(*graph);
  const auto finite = oracle.finite_candidates();

  std::vector<Candidate> fixed;
  std::uint64_t universe = 0;
  if (finite) {
    fixed = make_candidates(*graph, *finite);
    std::unordered_set<ConfigDigest, ConfigDigestHash> distinct;
    for (const auto& c : fixed) distinct.insert(c.digest);
    universe = distinct.size();
  } else {
    auto total = space_size_u64(*graph);
    universe = total.value_or(std::numeric_limits<std::uint64_t>::max());
    if (cfg.candidates.kind == CandidateMode::Kind::kExhaustive) {
      if (!total || *total > kExhaustiveLimit) {
        throw std::invalid_argument("space too large for exhaustive candidates; use a pool");
      }
      auto all = enumerate_configurations(*graph, kExhaustiveLimit);
      fixed = make_candidates(*graph, all);
    }
  }

  for (std::size_t t = 1; t <= cfg.budget; ++t) {
    if (result.history.size() >= universe) break;
    std::vector<Candidate> pool;
    std::span<const Candidate> candidates = fixed;
    if (cfg.candidates.kind == CandidateMode::Kind::kPool) {
      std::unordered_set<ConfigDigest, ConfigDigestHash> in_pool;
      while (pool.empty()) {
        for (std::size_t k = 0; k < cfg.candidates.pool_size; ++k) {
          Configuration c = finite ? (*finite)[pool_rng.uniform_index(finite->size())]
                                   : random_configuration(*graph, pool_rng);
          ConfigDigest d = digester(c);
          if (result.history.contains(d) || !in_pool.insert(d).second) continue;
          pool.push_back({std::move(c), d});
        }
      }
      candidates = pool;
    }
    const Selection sel = select_next_index(result.model, candidates, result.history, cfg.strategy,
                                            tie_rng, cfg.crowd_floor);
    const Candidate& chosen = candidates[sel.index];
    bool built;
    try {
      built = oracle.evaluate(chosen.config);
    } catch (const std::exception& e) {
      throw OracleError(t, e.what());
    }
    BuildRecord record{chosen.config, built};
    result.trace.push_back({t, chosen.digest, sel.score, built});
    result.model = refit_incremental(result.model, record);
    result.history.add(std::move(record), chosen.digest);
  }
  return result;
}

}  // namespace buildtune
