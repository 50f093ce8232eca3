#pragma once

// Sensitivity of build outcomes to packages and dependency pairs, and
// per-edge version-pair compatibility derived from a fitted model.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "buildtune/surrogate.hpp"

namespace buildtune {

// Natural-log Jensen-Shannon divergence, in [0, ln 2]. Zero-probability
// terms contribute nothing to their KL sum.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw std::invalid_argument("distributions must share a non-empty support");
  }
  auto check = [](std::span<const double> d) {
    double sum = 0.0;
    for (double x : d) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("probabilities must be non-negative");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("distribution does not sum to 1");
  };
  check(p);
  check(q);
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
  }
  // Rounding can leave a tiny negative or a hair above ln 2.
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, std::numbers::ln2);
}

struct ImportanceEntry {
  enum class Kind { kPackage, kEdge };
  Kind kind = Kind::kPackage;
  // Package name, or "parent+child" for an edge.
  std::string target;
  double score = 0.0;
};

// JS divergence between the good and bad factor of every package and every
// edge (edge factors flattened over version pairs), best first, ties broken
// by target name. Returns at most top_k entries.
inline std::vector<ImportanceEntry> importance_ranking(const FactorModel& model, std::size_t top_k) {
  const auto& graph = model.graph();
  std::vector<ImportanceEntry> out;
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    out.push_back({ImportanceEntry::Kind::kPackage, graph.name(i),
                   js_divergence(model.good().node_factors()[i], model.bad().node_factors()[i])});
  }
  for (std::size_t e = 0; e < graph.edges().size(); ++e) {
    const Edge& edge = graph.edges()[e];
    out.push_back({ImportanceEntry::Kind::kEdge, graph.name(edge.parent) + "+" + graph.name(edge.child),
                   js_divergence(model.good().edge_factors()[e], model.bad().edge_factors()[e])});
  }
  std::sort(out.begin(), out.end(), [](const ImportanceEntry& a, const ImportanceEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.target < b.target;
  });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

inline std::string importance_to_csv(std::span<const ImportanceEntry> entries) {
  std::ostringstream out;
  out << "target,score\n";
  char buf[32];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%.6f", e.score);
    out << e.target << ',' << buf << '\n';
  }
  return out.str();
}

struct CompatibilityMatrix {
  PackageIndex parent = 0;
  PackageIndex child = 0;
  std::size_t rows = 0;  // parent versions
  std::size_t cols = 0;  // child versions
  std::vector<double> cells;  // row-major

  double at(std::size_t u, std::size_t w) const { return cells.at(u * cols + w); }
};

// EI restricted to one edge's factors:
//   cell(u, w) = 1 / (alpha + (F_bad(u, w) / F_good(u, w)) (1 - alpha))
inline CompatibilityMatrix pair_compatibility(const FactorModel& model, PackageIndex parent,
                                              PackageIndex child) {
  const auto& graph = model.graph();
  auto e = graph.find_edge(parent, child);
  if (!e) throw std::invalid_argument("no edge between the given packages");
  CompatibilityMatrix m{parent, child, graph.domain_size(parent), graph.domain_size(child), {}};
  m.cells.reserve(m.rows * m.cols);
  for (VersionIndex u = 0; u < m.rows; ++u) {
    for (VersionIndex w = 0; w < m.cols; ++w) {
      const double log_ratio =
          std::log(model.bad().edge_weight(*e, u, w)) - std::log(model.good().edge_weight(*e, u, w));
      m.cells.push_back(expected_improvement_from_log_ratio(model.alpha(), log_ratio));
    }
  }
  return m;
}

inline CompatibilityMatrix pair_compatibility(const FactorModel& model, const std::string& parent,
                                              const std::string& child) {
  auto p = model.graph().find_package(parent);
  auto c = model.graph().find_package(child);
  if (!p || !c) throw std::invalid_argument("unknown edge " + parent + "+" + child);
  return pair_compatibility(model, *p, *c);
}

struct ForbiddenPair {
  VersionIndex parent_version = 0;
  VersionIndex child_version = 0;
  double ei = 0.0;
};

inline constexpr double kDefaultConstraintThreshold = 0.25;

// Pairs whose cell falls strictly below threshold * (largest cell), in
// row-major order.
inline std::vector<ForbiddenPair> extract_constraints(const CompatibilityMatrix& matrix, double threshold) {
  std::vector<ForbiddenPair> out;
  if (matrix.cells.empty()) return out;
  const double cut = threshold * *std::max_element(matrix.cells.begin(), matrix.cells.end());
  for (std::size_t u = 0; u < matrix.rows; ++u) {
    for (std::size_t w = 0; w < matrix.cols; ++w) {
      if (matrix.at(u, w) < cut) {
        out.push_back({static_cast<VersionIndex>(u), static_cast<VersionIndex>(w), matrix.at(u, w)});
      }
    }
  }
  return out;
}

// Matrix as CSV: header row of child versions, one row per parent version.
inline std::string compatibility_to_csv(const DependencyGraph& graph, const CompatibilityMatrix& m) {
  std::ostringstream out;
  out << graph.name(m.parent) << '\\' << graph.name(m.child);
  for (std::size_t w = 0; w < m.cols; ++w) out << ',' << graph.domain(m.child)[w];
  out << '\n';
  char buf[32];
  for (std::size_t u = 0; u < m.rows; ++u) {
    out << graph.domain(m.parent)[u];
    for (std::size_t w = 0; w < m.cols; ++w) {
      std::snprintf(buf, sizeof buf, "%.6f", m.at(u, w));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

inline Json constraints_to_json(const DependencyGraph& graph, const CompatibilityMatrix& m,
                                std::span<const ForbiddenPair> pairs) {
  Json arr = Json::array();
  for (const auto& p : pairs) {
    arr.push_back({{"parent", graph.name(m.parent)},
                   {"parent_version", graph.domain(m.parent)[p.parent_version]},
                   {"child", graph.name(m.child)},
                   {"child_version", graph.domain(m.child)[p.child_version]},
                   {"ei", p.ei}});
  }
  return arr;
}

}  // namespace buildtune
