#pragma once

// Factorized good/bad densities over the dependency graph, the density-ratio
// expected improvement, and the wisdom-of-the-crowd score.
//
// Both densities are products of one factor per package (over its versions)
// and one factor per dependency edge (over parent-version x child-version
// pairs). Factors are smoothed empirical frequencies, so every cell is
// strictly positive and the ratio P_bad/P_good is always defined.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "buildtune/configspace.hpp"
#include "buildtune/dataset.hpp"

namespace buildtune {

// Occurrence counts of versions and version pairs on one side (good or bad).
struct FactorCounts {
  std::uint64_t total = 0;
  std::vector<std::vector<std::uint64_t>> nodes;  // [package][version]
  std::vector<std::vector<std::uint64_t>> edges;  // [edge][parent_v * m_child + child_v]

  static FactorCounts zeros(const DependencyGraph& graph) {
    FactorCounts c;
    c.nodes.resize(graph.size());
    for (PackageIndex i = 0; i < graph.size(); ++i) c.nodes[i].assign(graph.domain_size(i), 0);
    c.edges.resize(graph.edges().size());
    for (std::size_t e = 0; e < graph.edges().size(); ++e) {
      const Edge& edge = graph.edges()[e];
      c.edges[e].assign(graph.domain_size(edge.parent) * graph.domain_size(edge.child), 0);
    }
    return c;
  }

  void add(const DependencyGraph& graph, const Configuration& config) {
    ++total;
    for (PackageIndex i = 0; i < graph.size(); ++i) ++nodes[i][config.assignment[i]];
    for (std::size_t e = 0; e < graph.edges().size(); ++e) {
      const Edge& edge = graph.edges()[e];
      ++edges[e][config.assignment[edge.parent] * graph.domain_size(edge.child) +
                 config.assignment[edge.child]];
    }
  }

  friend bool operator==(const FactorCounts&, const FactorCounts&) = default;
};

// Node and edge factor weights for one density. Log-weights are cached at
// construction; the table is immutable afterwards.
class FactorTable {
 public:
  FactorTable() = default;

  // Weights must be strictly positive and shaped like the graph: one vector of
  // length m_i per package, one row-major m_parent x m_child matrix per edge.
  FactorTable(const DependencyGraph& graph, std::vector<std::vector<double>> node_weights,
              std::vector<std::vector<double>> edge_weights, double smoothing = 0.0)
      : nodes_(std::move(node_weights)), edges_(std::move(edge_weights)), smoothing_(smoothing) {
    if (nodes_.size() != graph.size() || edges_.size() != graph.edges().size()) {
      throw std::invalid_argument("factor table shape does not match graph");
    }
    edge_stride_.resize(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& edge = graph.edges()[e];
      edge_ends_.push_back(edge);
      edge_stride_[e] = graph.domain_size(edge.child);
      if (edges_[e].size() != graph.domain_size(edge.parent) * graph.domain_size(edge.child)) {
        throw std::invalid_argument("edge factor shape does not match graph");
      }
    }
    for (PackageIndex i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].size() != graph.domain_size(i)) {
        throw std::invalid_argument("node factor shape does not match graph");
      }
    }
    auto logs = [](const std::vector<std::vector<double>>& w) {
      std::vector<std::vector<double>> out(w.size());
      for (std::size_t k = 0; k < w.size(); ++k) {
        out[k].reserve(w[k].size());
        for (double x : w[k]) {
          if (!(x > 0.0) || !std::isfinite(x)) {
            throw std::invalid_argument("factor weights must be finite and positive");
          }
          out[k].push_back(std::log(x));
        }
      }
      return out;
    };
    log_nodes_ = logs(nodes_);
    log_edges_ = logs(edges_);
  }

  // cell = (count + s) / (total + s * cells)
  static FactorTable from_counts(const DependencyGraph& graph, const FactorCounts& counts,
                                 double smoothing) {
    if (!(smoothing > 0.0)) throw std::invalid_argument("smoothing must be positive");
    auto normalize = [&](const std::vector<std::uint64_t>& c) {
      const double denom = static_cast<double>(counts.total) + smoothing * static_cast<double>(c.size());
      std::vector<double> w;
      w.reserve(c.size());
      for (auto k : c) w.push_back((static_cast<double>(k) + smoothing) / denom);
      return w;
    };
    std::vector<std::vector<double>> nodes, edges;
    nodes.reserve(counts.nodes.size());
    edges.reserve(counts.edges.size());
    for (const auto& c : counts.nodes) nodes.push_back(normalize(c));
    for (const auto& c : counts.edges) edges.push_back(normalize(c));
    return FactorTable(graph, std::move(nodes), std::move(edges), smoothing);
  }

  const std::vector<std::vector<double>>& node_factors() const noexcept { return nodes_; }
  const std::vector<std::vector<double>>& edge_factors() const noexcept { return edges_; }
  double smoothing() const noexcept { return smoothing_; }

  double node_weight(PackageIndex i, VersionIndex v) const { return nodes_.at(i).at(v); }
  double edge_weight(std::size_t e, VersionIndex parent_v, VersionIndex child_v) const {
    return edges_.at(e).at(parent_v * edge_stride_.at(e) + child_v);
  }
  std::size_t edge_columns(std::size_t e) const { return edge_stride_.at(e); }

  // Unnormalized joint log-density:
  //   sum_i log F_i(x_i) + sum_{(j,k) in E} log F_jk(x_j, x_k)
  double log_density(const Configuration& config) const {
    const auto& x = config.assignment;
    double acc = 0.0;
    for (std::size_t i = 0; i < log_nodes_.size(); ++i) acc += log_nodes_[i][x[i]];
    for (std::size_t e = 0; e < log_edges_.size(); ++e) {
      acc += log_edges_[e][x[edge_ends_[e].parent] * edge_stride_[e] + x[edge_ends_[e].child]];
    }
    return acc;
  }

  friend bool operator==(const FactorTable& a, const FactorTable& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::vector<std::vector<double>> nodes_;
  std::vector<std::vector<double>> edges_;
  std::vector<std::vector<double>> log_nodes_;
  std::vector<std::vector<double>> log_edges_;
  std::vector<Edge> edge_ends_;
  std::vector<std::size_t> edge_stride_;
  double smoothing_ = 0.0;
};

enum class ScoreKind { kExpectedImprovement, kCrowd, kRandom };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::kExpectedImprovement: return "expected-improvement";
    case ScoreKind::kCrowd: return "crowd";
    case ScoreKind::kRandom: return "random";
  }
  return "unknown";
}

struct Score {
  double value = 0.0;
  ScoreKind kind = ScoreKind::kExpectedImprovement;
};

// Log-ratios are clamped to this magnitude before exponentiation.
inline constexpr double kLogRatioClamp = 700.0;

// EI = 1 / (alpha + r (1 - alpha)) with r = exp(log_ratio) = P_bad / P_good.
inline double expected_improvement_from_log_ratio(double alpha, double log_ratio) {
  const double r = std::exp(std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp));
  return 1.0 / (alpha + r * (1.0 - alpha));
}

inline double laplace_prior(std::uint64_t n_good, std::uint64_t n_bad) {
  return (static_cast<double>(n_good) + 1.0) / (static_cast<double>(n_good + n_bad) + 2.0);
}

// Paired good/bad densities plus the success prior alpha.
class FactorModel {
 public:
  static constexpr double kDefaultSmoothing = 1.0;

  // Fits both sides from scratch. An empty history gives uniform factors and
  // alpha = 1/2.
  static FactorModel fit(std::span<const BuildRecord> history,
                         std::shared_ptr<const DependencyGraph> graph,
                         double smoothing = kDefaultSmoothing) {
    if (!(smoothing > 0.0)) throw std::invalid_argument("smoothing must be positive");
    FactorCounts good = FactorCounts::zeros(*graph);
    FactorCounts bad = FactorCounts::zeros(*graph);
    for (const auto& r : history) {
      if (!is_valid_configuration(*graph, r.config)) {
        throw std::invalid_argument("history configuration does not match graph");
      }
      (r.built ? good : bad).add(*graph, r.config);
    }
    return FactorModel(std::move(graph), smoothing, std::move(good), std::move(bad));
  }

  // Model assembled from arbitrary tables (no counts); used to probe EI
  // directly. Such a model cannot be refit or crowd-scored.
  static FactorModel from_tables(std::shared_ptr<const DependencyGraph> graph, FactorTable good,
                                 FactorTable bad, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    FactorModel m;
    m.graph_ = std::move(graph);
    m.good_ = std::move(good);
    m.bad_ = std::move(bad);
    m.alpha_ = alpha;
    m.smoothing_ = m.good_.smoothing();
    return m;
  }

  // One more observation; identical, cell for cell, to refitting on the
  // extended history. Only the affected side's table is rebuilt.
  FactorModel with_record(const BuildRecord& record) const {
    if (!good_counts_ || !bad_counts_) throw std::logic_error("model has no counts to update");
    if (!is_valid_configuration(*graph_, record.config)) {
      throw std::invalid_argument("record configuration does not match graph");
    }
    FactorModel next = *this;
    if (record.built) {
      next.good_counts_->add(*graph_, record.config);
      next.good_ = FactorTable::from_counts(*graph_, *next.good_counts_, smoothing_);
    } else {
      next.bad_counts_->add(*graph_, record.config);
      next.bad_ = FactorTable::from_counts(*graph_, *next.bad_counts_, smoothing_);
    }
    next.alpha_ = laplace_prior(next.good_counts_->total, next.bad_counts_->total);
    return next;
  }

  const DependencyGraph& graph() const noexcept { return *graph_; }
  const std::shared_ptr<const DependencyGraph>& graph_ptr() const noexcept { return graph_; }
  const FactorTable& good() const noexcept { return good_; }
  const FactorTable& bad() const noexcept { return bad_; }
  double alpha() const noexcept { return alpha_; }
  double smoothing() const noexcept { return smoothing_; }
  bool has_counts() const noexcept { return good_counts_.has_value(); }
  const FactorCounts& good_counts() const { return good_counts_.value(); }
  const FactorCounts& bad_counts() const { return bad_counts_.value(); }
  std::uint64_t n_good() const { return good_counts_ ? good_counts_->total : 0; }
  std::uint64_t n_bad() const { return bad_counts_ ? bad_counts_->total : 0; }

  // Reconstructs a fitted model from its counts.
  static FactorModel from_counts(std::shared_ptr<const DependencyGraph> graph, double smoothing,
                                 FactorCounts good, FactorCounts bad) {
    return FactorModel(std::move(graph), smoothing, std::move(good), std::move(bad));
  }

 private:
  FactorModel() = default;

  FactorModel(std::shared_ptr<const DependencyGraph> graph, double smoothing, FactorCounts good,
              FactorCounts bad)
      : graph_(std::move(graph)), smoothing_(smoothing) {
    good_ = FactorTable::from_counts(*graph_, good, smoothing);
    bad_ = FactorTable::from_counts(*graph_, bad, smoothing);
    alpha_ = laplace_prior(good.total, bad.total);
    good_counts_ = std::move(good);
    bad_counts_ = std::move(bad);
  }

  std::shared_ptr<const DependencyGraph> graph_;
  FactorTable good_;
  FactorTable bad_;
  std::optional<FactorCounts> good_counts_;
  std::optional<FactorCounts> bad_counts_;
  double alpha_ = 0.5;
  double smoothing_ = kDefaultSmoothing;
};

inline FactorModel fit(std::span<const BuildRecord> history, const DependencyGraph& graph,
                       double smoothing = FactorModel::kDefaultSmoothing) {
  return FactorModel::fit(history, std::make_shared<const DependencyGraph>(graph), smoothing);
}

inline FactorModel refit_incremental(const FactorModel& model, const BuildRecord& record) {
  return model.with_record(record);
}

inline double log_density(const FactorTable& table, const Configuration& config) {
  return table.log_density(config);
}

inline Score expected_improvement(const FactorModel& model, const Configuration& config) {
  const double log_ratio = model.bad().log_density(config) - model.good().log_density(config);
  return {expected_improvement_from_log_ratio(model.alpha(), log_ratio),
          ScoreKind::kExpectedImprovement};
}

// Product over packages of the unsmoothed frequency of the assigned version
// among good observations, each frequency raised to at least `floor`. Edge
// factors do not enter. No good observations means every frequency is zero.
inline Score crowd_score(const FactorModel& model, const Configuration& config, double floor = 0.0) {
  const FactorCounts& good = model.good_counts();
  double log_score = 0.0;
  for (PackageIndex i = 0; i < good.nodes.size(); ++i) {
    double freq = good.total == 0 ? 0.0
                                  : static_cast<double>(good.nodes[i][config.assignment[i]]) /
                                        static_cast<double>(good.total);
    freq = std::max(freq, floor);
    if (freq <= 0.0) return {0.0, ScoreKind::kCrowd};
    log_score += std::log(freq);
  }
  return {std::exp(log_score), ScoreKind::kCrowd};
}

// ---------------------------------------------------------------------------
// JSON export / import

inline Json factor_table_to_json(const DependencyGraph& graph, const FactorTable& table) {
  Json nodes = Json::object();
  for (PackageIndex i = 0; i < graph.size(); ++i) nodes[graph.name(i)] = table.node_factors()[i];
  Json edges = Json::array();
  for (std::size_t e = 0; e < graph.edges().size(); ++e) {
    const Edge& edge = graph.edges()[e];
    Json rows = Json::array();
    const std::size_t cols = graph.domain_size(edge.child);
    for (std::size_t u = 0; u < graph.domain_size(edge.parent); ++u) {
      rows.push_back(std::vector<double>(table.edge_factors()[e].begin() + u * cols,
                                         table.edge_factors()[e].begin() + (u + 1) * cols));
    }
    edges.push_back({{"parent", graph.name(edge.parent)},
                     {"child", graph.name(edge.child)},
                     {"weights", rows}});
  }
  return Json{{"nodes", nodes}, {"edges", edges}};
}

inline Json model_to_json(const FactorModel& model) {
  const auto& graph = model.graph();
  Json doc{{"format", "buildtune-model"},
           {"version", 1},
           {"graph", graph_to_json(graph)},
           {"smoothing", model.smoothing()},
           {"alpha", model.alpha()},
           {"n_good", model.n_good()},
           {"n_bad", model.n_bad()},
           {"good", factor_table_to_json(graph, model.good())},
           {"bad", factor_table_to_json(graph, model.bad())}};
  if (model.has_counts()) {
    auto counts = [](const FactorCounts& c) {
      return Json{{"total", c.total}, {"nodes", c.nodes}, {"edges", c.edges}};
    };
    doc["counts"] = {{"good", counts(model.good_counts())}, {"bad", counts(model.bad_counts())}};
  }
  return doc;
}

// Rebuilds a model from its export. Fitted models are reconstructed from the
// stored counts; table-only models from the stored weights and alpha.
inline FactorModel model_from_json(const Json& doc) {
  try {
    if (doc.value("format", "") != "buildtune-model") throw DataError("not a model document");
    auto graph = std::make_shared<const DependencyGraph>(graph_from_json(doc.at("graph")));
    if (doc.contains("counts")) {
      auto counts = [&](const Json& j) {
        FactorCounts c;
        c.total = j.at("total").get<std::uint64_t>();
        c.nodes = j.at("nodes").get<std::vector<std::vector<std::uint64_t>>>();
        c.edges = j.at("edges").get<std::vector<std::vector<std::uint64_t>>>();
        FactorCounts shape = FactorCounts::zeros(*graph);
        if (c.nodes.size() != shape.nodes.size() || c.edges.size() != shape.edges.size()) {
          throw DataError("model counts do not match graph");
        }
        for (std::size_t k = 0; k < c.nodes.size(); ++k) {
          if (c.nodes[k].size() != shape.nodes[k].size()) throw DataError("model counts do not match graph");
        }
        for (std::size_t k = 0; k < c.edges.size(); ++k) {
          if (c.edges[k].size() != shape.edges[k].size()) throw DataError("model counts do not match graph");
        }
        return c;
      };
      return FactorModel::from_counts(graph, doc.at("smoothing").get<double>(),
                                      counts(doc.at("counts").at("good")),
                                      counts(doc.at("counts").at("bad")));
    }
    auto table = [&](const Json& j) {
      std::vector<std::vector<double>> nodes, edges;
      for (PackageIndex i = 0; i < graph->size(); ++i) {
        nodes.push_back(j.at("nodes").at(graph->name(i)).get<std::vector<double>>());
      }
      for (const auto& e : j.at("edges")) {
        std::vector<double> flat;
        for (const auto& row : e.at("weights")) {
          for (double w : row.get<std::vector<double>>()) flat.push_back(w);
        }
        edges.push_back(std::move(flat));
      }
      return FactorTable(*graph, std::move(nodes), std::move(edges), doc.value("smoothing", 0.0));
    };
    return FactorModel::from_tables(graph, table(doc.at("good")), table(doc.at("bad")),
                                    doc.at("alpha").get<double>());
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid model document: ") + e.what());
  }
}

inline FactorModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  try {
    return model_from_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw DataError("model file '" + path + "': " + e.what());
  }
}

inline void save_model(const FactorModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << model_to_json(model).dump(2) << '\n';
}

}  // namespace buildtune
