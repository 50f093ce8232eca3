#include <gtest/gtest.h>

#include <map>
#include <set>

#include "buildtune/buildsim.hpp"
#include "buildtune/metrics.hpp"
#include "buildtune/sampler.hpp"
#include "support.hpp"

using namespace buildtune;
using namespace buildtune::testing;

namespace {

class ConstantOracle : public BuildOracle {
 public:
  explicit ConstantOracle(bool value) : value_(value) {}
  bool evaluate(const Configuration&) const override { return value_; }

 private:
  bool value_;
};

// Fails on its n-th evaluation.
class FlakyOracle : public BuildOracle {
 public:
  explicit FlakyOracle(int fail_at) : fail_at_(fail_at) {}
  bool evaluate(const Configuration&) const override {
    if (++calls_ == fail_at_) throw std::runtime_error("worker lost");
    return true;
  }

 private:
  int fail_at_;
  mutable int calls_ = 0;
};

Benchmark two_hundred() {
  BenchmarkSpec spec;
  spec.packages = 5;
  spec.domain_sizes = {5, 5, 2, 2, 2};
  spec.target_rate = 0.15;
  spec.seed = 7;
  return generate_benchmark(spec);
}

}  // namespace

TEST(Bootstrap, DrawsDistinctConfigurations) {
  auto g = chain3(4, 4, 4);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  Rng rng(1);
  auto h = bootstrap(oracle, *g, cfg, rng);
  EXPECT_EQ(h.size(), 20u);
  EXPECT_EQ(std::set<ConfigDigest>(h.digests().begin(), h.digests().end()).size(), 20u);
}

TEST(Bootstrap, ExhaustsSpaceOfExactSize) {
  auto g = make_graph({"A", "B"}, {4, 5}, {{"A", "B"}});
  ConstantOracle oracle(false);
  SamplerConfig cfg;
  Rng rng(2);
  auto h = bootstrap(oracle, *g, cfg, rng);
  std::set<Configuration> seen;
  for (const auto& r : h.records()) seen.insert(r.config);
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Bootstrap, Deterministic) {
  auto g = chain3(3, 3, 3);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  Rng a(5), b(5);
  EXPECT_EQ(bootstrap(oracle, *g, cfg, a).digests(), bootstrap(oracle, *g, cfg, b).digests());
}

TEST(Bootstrap, TooFewConfigurations) {
  auto g = chain3(2, 2, 2);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  Rng rng(1);
  EXPECT_THROW(bootstrap(oracle, *g, cfg, rng), CandidateExhaustedError);
}

TEST(SelectNext, PicksLargestScore) {
  auto g = make_graph({"A"}, {2}, {});
  // alpha 0.5: ratio 11/9 gives EI 0.9, ratio 4 gives EI 0.4.
  FactorTable good(*g, {{0.9, 0.5}}, {});
  FactorTable bad(*g, {{1.1, 2.0}}, {});
  FactorModel m = FactorModel::from_tables(g, good, bad, 0.5);
  auto candidates = make_candidates(*g, std::vector<Configuration>{cfg({1}), cfg({0})});
  ObservationHistory h;
  Rng rng(1);
  auto sel = select_next_index(m, candidates, h, Strategy::kBayesian, rng);
  EXPECT_EQ(candidates[sel.index].config, cfg({0}));
  EXPECT_NEAR(sel.score, 0.9, 1e-12);
}

TEST(SelectNext, NoCandidatesLeft) {
  auto g = make_graph({"A"}, {2}, {});
  auto candidates = make_candidates(*g, std::vector<Configuration>{cfg({0}), cfg({1})});
  ObservationHistory h;
  for (const auto& c : candidates) h.add({c.config, true}, c.digest);
  Rng rng(1);
  FactorModel m = FactorModel::fit(h.records(), g);
  for (Strategy s : {Strategy::kBayesian, Strategy::kCrowd, Strategy::kRandom}) {
    EXPECT_THROW(select_next(m, candidates, h, s, rng), CandidateExhaustedError);
  }
}

TEST(SelectNext, SkipsEvaluatedCandidates) {
  auto g = make_graph({"A"}, {3}, {});
  std::vector<BuildRecord> seen{{cfg({0}), true}, {cfg({0 + 1}), false}};
  FactorModel m = FactorModel::fit(seen, g);
  auto candidates = make_candidates(*g, all_configs(*g));
  ObservationHistory h;
  h.add(seen[0], digest(*g, seen[0].config));
  Rng rng(3);
  // v1 has the best ratio but is already evaluated.
  EXPECT_EQ(select_next(m, candidates, h, Strategy::kBayesian, rng), cfg({2}));
}

TEST(SelectNext, ThreeWayTieIsUniform) {
  auto g = make_graph({"A"}, {3}, {});
  FactorModel m = FactorModel::fit({}, g);
  auto candidates = make_candidates(*g, all_configs(*g));
  ObservationHistory h;
  std::array<int, 3> counts{};
  const int trials = 3000;
  for (int t = 0; t < trials; ++t) {
    Rng rng(t, "tie-break");
    ++counts[select_next_index(m, candidates, h, Strategy::kBayesian, rng).index];
  }
  const double sigma = std::sqrt(trials * (1.0 / 3) * (2.0 / 3));
  for (int c : counts) EXPECT_LE(std::abs(c - trials / 3.0), 3 * sigma) << c;
}

TEST(Run, ZeroBudgetIsBootstrapOnly) {
  auto g = chain3(3, 3, 3);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  cfg.budget = 0;
  auto res = run(oracle, g, cfg);
  EXPECT_EQ(res.history.size(), 20u);
  EXPECT_TRUE(res.trace.empty());
}

TEST(Run, AlwaysBuildsGivesFullPrecision) {
  auto g = chain3(3, 3, 4);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  cfg.budget = 15;
  auto res = run(oracle, g, cfg);
  for (std::size_t k = 1; k <= res.history.size(); ++k) {
    EXPECT_DOUBLE_EQ(precision(res.history.records().first(k)), 1.0);
  }
}

TEST(Run, DegenerateBootstrapProceeds) {
  auto g = chain3(3, 3, 4);
  ConstantOracle oracle(false);
  for (Strategy s : {Strategy::kBayesian, Strategy::kCrowd, Strategy::kRandom}) {
    SamplerConfig cfg;
    cfg.strategy = s;
    cfg.budget = 10;
    auto res = run(oracle, g, cfg);
    EXPECT_EQ(res.history.size(), 30u);
  }
}

TEST(Run, HistoryInvariantsAndDeterminism) {
  auto b = two_hundred();
  SyntheticOracle oracle(b.graph, b.rules, 1);
  for (Strategy s : {Strategy::kBayesian, Strategy::kCrowd, Strategy::kRandom}) {
    SamplerConfig cfg;
    cfg.strategy = s;
    cfg.budget = 60;
    cfg.seed = 9;
    auto r1 = run(oracle, b.graph, cfg);
    auto r2 = run(oracle, b.graph, cfg);
    EXPECT_EQ(r1.history.digests(), r2.history.digests());
    EXPECT_EQ(r1.history.size(), 80u);
    EXPECT_EQ(r1.trace.size(), r1.history.size() - cfg.bootstrap_size);
    EXPECT_EQ(std::set<ConfigDigest>(r1.history.digests().begin(), r1.history.digests().end()).size(), 80u);
    for (std::size_t k = 0; k < r1.trace.size(); ++k) {
      EXPECT_EQ(r1.trace[k].t, k + 1);
      EXPECT_EQ(r1.trace[k].digest, r1.history.digests()[cfg.bootstrap_size + k]);
    }
  }
}

TEST(Run, StopsWhenSpaceIsExhausted) {
  auto g = chain3(3, 3, 3);
  ConstantOracle oracle(true);
  SamplerConfig cfg;
  cfg.budget = 100;
  EXPECT_EQ(run(oracle, g, cfg).history.size(), 27u);
}

TEST(Run, PoolModeDrawsFreshCandidates) {
  auto b = two_hundred();
  SyntheticOracle oracle(b.graph, b.rules, 1);
  SamplerConfig cfg;
  cfg.candidates = CandidateMode::pool(30);
  cfg.budget = 100;
  auto res = run(oracle, b.graph, cfg);
  EXPECT_EQ(res.history.size(), 120u);
  EXPECT_EQ(std::set<ConfigDigest>(res.history.digests().begin(), res.history.digests().end()).size(), 120u);
}

TEST(Run, DatasetReplayUsesRecordedConfigurations) {
  auto b = two_hundred();
  SyntheticOracle synthetic(b.graph, b.rules, 1);
  Rng rng(4);
  Dataset d = sample_dataset(synthetic, b.graph, 50, rng);
  DatasetOracle oracle(d);
  SamplerConfig cfg;
  cfg.budget = 1000;
  auto res = run(oracle, b.graph, cfg);
  EXPECT_EQ(res.history.size(), 50u);
  for (const auto& x : res.history.digests()) EXPECT_TRUE(d.find(x).has_value());
}

TEST(Run, OracleFailureCarriesIteration) {
  auto g = chain3(3, 3, 3);
  FlakyOracle oracle(24);
  SamplerConfig cfg;
  cfg.budget = 10;
  try {
    run(oracle, g, cfg);
    FAIL() << "oracle failure swallowed";
  } catch (const OracleError& e) {
    EXPECT_EQ(e.iteration(), 4u);
  }
}

TEST(Run, RandomStrategyIsUniformWithoutReplacement) {
  // Four configurations, bootstrap 1, one selection: each ordered pair of
  // distinct configurations should appear 1/12 of the time.
  auto g = make_graph({"A", "B"}, {2, 2}, {{"A", "B"}});
  ConstantOracle oracle(true);
  std::map<std::pair<Configuration, Configuration>, int> counts;
  const int trials = 3000;
  for (int t = 0; t < trials; ++t) {
    SamplerConfig cfg;
    cfg.strategy = Strategy::kRandom;
    cfg.bootstrap_size = 1;
    cfg.budget = 1;
    cfg.seed = t;
    auto res = run(oracle, g, cfg);
    ++counts[{res.history.records()[0].config, res.history.records()[1].config}];
  }
  EXPECT_EQ(counts.size(), 12u);
  const double p = 1.0 / 12, sigma = std::sqrt(trials * p * (1 - p));
  for (const auto& [pair, c] : counts) EXPECT_LE(std::abs(c - trials * p), 3 * sigma);
}

TEST(Run, BayesianFindsMoreGoodThanRandom) {
  auto b = two_hundred();
  ASSERT_EQ(b.space, 200u);
  // Ground truth by re-evaluating the rules directly.
  std::size_t truth = 0;
  for (const auto& x : all_configs(*b.graph)) truth += violates(b.rules, x) ? 0 : 1;
  ASSERT_EQ(truth, b.good);
  SyntheticOracle oracle(b.graph, b.rules, 42);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplerConfig cfg;
    cfg.budget = 80;
    cfg.seed = seed;
    const auto bayes = run(oracle, b.graph, cfg).history.good_count();
    cfg.strategy = Strategy::kRandom;
    const auto random = run(oracle, b.graph, cfg).history.good_count();
    wins += bayes >= random ? 1 : 0;
  }
  EXPECT_GE(wins, 9);
}

TEST(SamplerConfig, Validation) {
  SamplerConfig cfg;
  cfg.bootstrap_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.candidates = CandidateMode::pool(0);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_strategy("crowd"), Strategy::kCrowd);
  EXPECT_THROW(parse_strategy("greedy"), std::invalid_argument);
}
