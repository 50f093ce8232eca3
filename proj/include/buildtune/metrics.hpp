#pragma once

// Precision, recall and AUPRC over selected samples, and the two evaluation
// protocols: repeated sample-size sweeps and train/test AUPRC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "buildtune/dataset.hpp"
#include "buildtune/history.hpp"
#include "buildtune/sampler.hpp"

namespace buildtune {

inline double precision(std::span<const BuildRecord> records) {
  if (records.empty()) throw std::invalid_argument("precision of an empty history");
  std::size_t good = 0;
  for (const auto& r : records) good += r.built ? 1 : 0;
  return static_cast<double>(good) / static_cast<double>(records.size());
}

inline double precision(const ObservationHistory& history) { return precision(history.records()); }

inline double recall(std::span<const BuildRecord> records, std::size_t total_good) {
  if (total_good == 0) throw std::invalid_argument("recall is undefined without good configurations");
  std::size_t good = 0;
  for (const auto& r : records) good += r.built ? 1 : 0;
  return static_cast<double>(good) / static_cast<double>(total_good);
}

inline double recall(const ObservationHistory& history, std::size_t total_good) {
  return recall(history.records(), total_good);
}

struct PRPoint {
  std::size_t k = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// Precision/recall of each requested prefix of one trajectory. Sizes larger
// than the history are clipped to it.
inline std::vector<PRPoint> pr_points(const ObservationHistory& history, std::span<const std::size_t> sizes,
                                      std::size_t total_good) {
  std::vector<PRPoint> out;
  for (std::size_t k : sizes) {
    k = std::min(k, history.size());
    auto prefix = history.records().first(k);
    out.push_back({k, precision(prefix), total_good == 0 ? 0.0 : recall(prefix, total_good)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// AUPRC

struct RankedItem {
  double score = 0.0;
  bool built = false;
};

// Sum over prefixes k = 1..N of P(H_k) * (R(H_k) - R(H_{k-1})) for a list
// already ordered best-first. Recall only moves at successes, so this is the
// mean over successes of the precision at their rank.
inline double auprc(std::span<const RankedItem> ranked) {
  if (ranked.empty()) throw std::invalid_argument("AUPRC of an empty ranking");
  std::size_t total_good = 0;
  for (const auto& item : ranked) total_good += item.built ? 1 : 0;
  if (total_good == 0) throw std::invalid_argument("AUPRC needs at least one good configuration");
  double area = 0.0;
  std::size_t good = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (!ranked[k].built) continue;
    ++good;
    area += static_cast<double>(good) / static_cast<double>(k + 1);
  }
  return area / static_cast<double>(total_good);
}

// The same sum truncated to steps whose recall does not exceed `cutoff`.
// Not renormalized, so a perfect ranking scores `cutoff` (rounded down to a
// recall step).
inline double auprc_at_cutoff(std::span<const RankedItem> ranked, double cutoff) {
  if (ranked.empty()) throw std::invalid_argument("AUPRC of an empty ranking");
  std::size_t total_good = 0;
  for (const auto& item : ranked) total_good += item.built ? 1 : 0;
  if (total_good == 0) throw std::invalid_argument("AUPRC needs at least one good configuration");
  double area = 0.0;
  std::size_t good = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (!ranked[k].built) continue;
    ++good;
    if (static_cast<double>(good) / static_cast<double>(total_good) > cutoff + 1e-12) break;
    area += static_cast<double>(good) / static_cast<double>(k + 1) / static_cast<double>(total_good);
  }
  return area;
}

struct ScoredOutcome {
  double score = 0.0;
  bool built = false;
  ConfigDigest digest;
};

// Orders by score descending with the digest as secondary key.
inline std::vector<RankedItem> rank_by_score(std::vector<ScoredOutcome> items) {
  std::sort(items.begin(), items.end(), [](const ScoredOutcome& a, const ScoredOutcome& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.digest < b.digest;
  });
  std::vector<RankedItem> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back({it.score, it.built});
  return out;
}

// ---------------------------------------------------------------------------
// Repeated sweeps

struct ExperimentReport {
  Strategy strategy = Strategy::kRandom;
  std::vector<std::size_t> sample_sizes;
  std::vector<double> mean_p, sd_p;
  // Empty when recall is unavailable (generative mode without a known total).
  std::vector<double> mean_r, sd_r;
  std::size_t repetitions = 0;
  std::vector<std::uint64_t> seeds;
  // [repetition][size]
  std::vector<std::vector<double>> run_precision;
  std::vector<std::vector<double>> run_recall;
  // Samples needed to reach recall 1 per repetition (0 when never reached).
  std::vector<std::size_t> samples_to_full_recall;
};

inline std::pair<double, double> mean_sd(std::span<const double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

struct SweepOptions {
  std::vector<Strategy> strategies{Strategy::kBayesian, Strategy::kCrowd, Strategy::kRandom};
  std::vector<std::size_t> sample_sizes{20, 40, 60, 80, 100};
  std::size_t repetitions = 10;
  std::uint64_t base_seed = 42;
  // Template for each run; strategy, budget and seed are overwritten.
  SamplerConfig sampler;
  // Run to exhaustion instead of the largest sample size (for samples-to-full-recall).
  bool run_to_exhaustion = false;
};

inline std::uint64_t repetition_seed(std::uint64_t base_seed, std::size_t repetition) {
  return base_seed + repetition;
}

// Runs every strategy `repetitions` times. Repetition r uses seed
// base_seed + r for all strategies, so bootstraps are paired across
// strategies. `total_good` enables recall.
inline std::vector<ExperimentReport> sweep(const BuildOracle& oracle,
                                           std::shared_ptr<const DependencyGraph> graph,
                                           std::optional<std::size_t> total_good,
                                           const SweepOptions& opts) {
  if (opts.sample_sizes.empty()) throw std::invalid_argument("no sample sizes requested");
  if (opts.repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  const std::size_t max_size = *std::max_element(opts.sample_sizes.begin(), opts.sample_sizes.end());
  std::vector<ExperimentReport> reports;
  for (Strategy strategy : opts.strategies) {
    ExperimentReport rep;
    rep.strategy = strategy;
    rep.sample_sizes = opts.sample_sizes;
    rep.repetitions = opts.repetitions;
    for (std::size_t r = 0; r < opts.repetitions; ++r) {
      SamplerConfig cfg = opts.sampler;
      cfg.strategy = strategy;
      cfg.seed = repetition_seed(opts.base_seed, r);
      cfg.budget = opts.run_to_exhaustion ? std::numeric_limits<std::size_t>::max()
                                          : (max_size > cfg.bootstrap_size ? max_size - cfg.bootstrap_size : 0);
      std::optional<RunResult> run_result;
      try {
        run_result.emplace(run(oracle, graph, cfg));
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("strategy ") + to_string(strategy) + ", seed " +
                                 std::to_string(cfg.seed) + ": " + e.what());
      }
      const RunResult& result = *run_result;
      rep.seeds.push_back(cfg.seed);
      auto points = pr_points(result.history, opts.sample_sizes, total_good.value_or(0));
      std::vector<double> ps, rs;
      for (const auto& p : points) {
        ps.push_back(p.precision);
        rs.push_back(p.recall);
      }
      rep.run_precision.push_back(std::move(ps));
      if (total_good) {
        rep.run_recall.push_back(std::move(rs));
        std::size_t found = 0, needed = 0;
        for (std::size_t k = 0; k < result.history.size(); ++k) {
          found += result.history.records()[k].built ? 1 : 0;
          if (found == *total_good) {
            needed = k + 1;
            break;
          }
        }
        rep.samples_to_full_recall.push_back(needed);
      }
    }
    for (std::size_t s = 0; s < opts.sample_sizes.size(); ++s) {
      std::vector<double> ps, rs;
      for (std::size_t r = 0; r < opts.repetitions; ++r) {
        ps.push_back(rep.run_precision[r][s]);
        if (total_good) rs.push_back(rep.run_recall[r][s]);
      }
      auto [mp, sp] = mean_sd(ps);
      rep.mean_p.push_back(mp);
      rep.sd_p.push_back(sp);
      if (total_good) {
        auto [mr, sr] = mean_sd(rs);
        rep.mean_r.push_back(mr);
        rep.sd_r.push_back(sr);
      }
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

// Dataset-replay sweep: candidates are the dataset's configurations and the
// recall denominator is its good count.
inline std::vector<ExperimentReport> sweep_experiment(const Dataset& dataset, const SweepOptions& opts) {
  const std::size_t max_size = *std::max_element(opts.sample_sizes.begin(), opts.sample_sizes.end());
  if (max_size > dataset.size()) {
    throw InsufficientDataError("largest sample size exceeds the dataset");
  }
  DatasetOracle oracle(dataset);
  const std::size_t good = dataset.good_count();
  return sweep(oracle, dataset.graph_ptr(), good > 0 ? std::optional<std::size_t>(good) : std::nullopt,
               opts);
}

namespace detail {

inline std::string fmt6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::vector<const ExperimentReport*> canonical_order(std::span<const ExperimentReport> reports) {
  std::vector<const ExperimentReport*> out;
  for (const auto& r : reports) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(), [](const auto* a, const auto* b) {
    return std::string(to_string(a->strategy)) < std::string(to_string(b->strategy));
  });
  return out;
}

}  // namespace detail

// Columns: strategy,size,mean_p,sd_p,mean_r,sd_r. Rows sorted by strategy
// name then size. Recall cells are empty when recall is unavailable.
inline std::string reports_to_csv(std::span<const ExperimentReport> reports) {
  std::ostringstream out;
  out << "strategy,size,mean_p,sd_p,mean_r,sd_r\n";
  for (const auto* rep : detail::canonical_order(reports)) {
    std::vector<std::size_t> order(rep->sample_sizes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return rep->sample_sizes[a] < rep->sample_sizes[b]; });
    for (auto s : order) {
      out << to_string(rep->strategy) << ',' << rep->sample_sizes[s] << ','
          << detail::fmt6(rep->mean_p[s]) << ',' << detail::fmt6(rep->sd_p[s]) << ',';
      if (!rep->mean_r.empty()) {
        out << detail::fmt6(rep->mean_r[s]) << ',' << detail::fmt6(rep->sd_r[s]);
      } else {
        out << ',';
      }
      out << '\n';
    }
  }
  return out.str();
}

inline Json reports_to_json(std::span<const ExperimentReport> reports) {
  Json arr = Json::array();
  for (const auto* rep : detail::canonical_order(reports)) {
    Json j{{"strategy", to_string(rep->strategy)},
           {"repetitions", rep->repetitions},
           {"seeds", rep->seeds},
           {"sample_sizes", rep->sample_sizes},
           {"mean_p", rep->mean_p},
           {"sd_p", rep->sd_p}};
    if (!rep->mean_r.empty()) {
      j["mean_r"] = rep->mean_r;
      j["sd_r"] = rep->sd_r;
      j["samples_to_full_recall"] = rep->samples_to_full_recall;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Train/test AUPRC

struct AuprcOptions {
  double train_fraction = 0.5;
  std::size_t bootstrap_size = 20;
  std::size_t selections = 100;
  double smoothing = FactorModel::kDefaultSmoothing;
  double crowd_floor = 0.0;
};

struct AuprcResult {
  double auprc = 0.0;
  std::vector<RankedItem> ranking;  // test set, best first
};

// Splits the dataset, runs the adaptive loop on the training part, fits the
// final model on what was selected, and ranks the held-out part by the
// strategy's score.
inline AuprcResult auprc_experiment(const Dataset& dataset, Strategy strategy, std::uint64_t seed,
                                    const AuprcOptions& opts = {}) {
  if (dataset.empty()) throw InsufficientDataError("empty dataset");
  Rng split_rng(seed, "split");
  auto [train, test] = split_train_test(dataset, opts.train_fraction, split_rng);
  if (train.size() < opts.selections + opts.bootstrap_size) {
    throw InsufficientDataError("training split holds " + std::to_string(train.size()) +
                                " configurations; need " +
                                std::to_string(opts.selections + opts.bootstrap_size));
  }
  if (test.good_count() == 0) throw InsufficientDataError("test split has no good configurations");

  SamplerConfig cfg;
  cfg.strategy = strategy;
  cfg.bootstrap_size = opts.bootstrap_size;
  cfg.budget = opts.selections;
  cfg.seed = seed;
  cfg.smoothing = opts.smoothing;
  cfg.crowd_floor = opts.crowd_floor;
  DatasetOracle oracle(train);
  RunResult result = run(oracle, dataset.graph_ptr(), cfg);
  FactorModel model = FactorModel::fit(result.history.records(), dataset.graph_ptr(), opts.smoothing);

  Rng score_rng(seed, "score");
  std::vector<ScoredOutcome> items;
  items.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = test.records()[i];
    const double s = strategy == Strategy::kRandom
                         ? score_rng.uniform_real()
                         : strategy_score(strategy, model, r.config, opts.crowd_floor);
    items.push_back({s, r.built, test.digests()[i]});
  }
  AuprcResult out;
  out.ranking = rank_by_score(std::move(items));
  out.auprc = auprc(out.ranking);
  return out;
}

}  // namespace buildtune
