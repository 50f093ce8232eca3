#pragma once

// Shared fixtures and independent reference computations for the test suite.

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "buildtune/buildsim.hpp"
#include "buildtune/configspace.hpp"
#include "buildtune/dataset.hpp"
#include "buildtune/surrogate.hpp"

namespace buildtune::testing {

inline std::vector<std::string> labels(std::size_t m) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < m; ++k) out.push_back("v" + std::to_string(k + 1));
  return out;
}

// Graph from names, domain sizes and (parent, child) name pairs; the first
// package is the root.
inline std::shared_ptr<const DependencyGraph> make_graph(
    const std::vector<std::string>& names, const std::vector<std::size_t>& sizes,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  std::vector<std::vector<std::string>> domains;
  for (auto m : sizes) domains.push_back(labels(m));
  std::vector<Edge> es;
  auto idx = [&](const std::string& n) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return i;
    throw std::invalid_argument("no package " + n);
  };
  for (const auto& [p, c] : edges) es.push_back({idx(p), idx(c)});
  return std::make_shared<const DependencyGraph>(names, std::move(domains), std::move(es), 0);
}

inline std::shared_ptr<const DependencyGraph> chain3(std::size_t a = 2, std::size_t b = 2, std::size_t c = 2) {
  return make_graph({"A", "B", "C"}, {a, b, c}, {{"A", "B"}, {"B", "C"}});
}

inline Configuration cfg(std::vector<VersionIndex> v) { return Configuration{std::move(v)}; }

// Every assignment of `graph`, written out with nested counters rather than
// the library's enumerator.
inline std::vector<Configuration> all_configs(const DependencyGraph& graph) {
  std::vector<Configuration> out;
  std::vector<VersionIndex> x(graph.size(), 0);
  for (;;) {
    out.push_back(Configuration{x});
    std::size_t i = 0;
    while (i < x.size()) {
      if (++x[i] < graph.domain_size(i)) break;
      x[i] = 0;
      ++i;
    }
    if (i == x.size()) return out;
  }
}

// Smoothed frequency tables counted straight from records, and the EI that
// follows from multiplying the cells directly (no logs).
struct DirectModel {
  std::vector<std::map<VersionIndex, double>> good_node, bad_node;
  std::vector<std::map<std::pair<VersionIndex, VersionIndex>, double>> good_edge, bad_edge;
  double alpha = 0.5;
};

inline DirectModel direct_model(const DependencyGraph& g, const std::vector<BuildRecord>& records, double s) {
  DirectModel m;
  double ng = 0, nb = 0;
  for (const auto& r : records) (r.built ? ng : nb) += 1;
  m.alpha = (ng + 1) / (ng + nb + 2);
  m.good_node.resize(g.size());
  m.bad_node.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (VersionIndex v = 0; v < g.domain_size(i); ++v) {
      double cg = 0, cb = 0;
      for (const auto& r : records)
        if (r.config.assignment[i] == v) (r.built ? cg : cb) += 1;
      const double m_i = static_cast<double>(g.domain_size(i));
      m.good_node[i][v] = (cg + s) / (ng + s * m_i);
      m.bad_node[i][v] = (cb + s) / (nb + s * m_i);
    }
  }
  m.good_edge.resize(g.edges().size());
  m.bad_edge.resize(g.edges().size());
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto [p, c] = g.edges()[e];
    const double cells = static_cast<double>(g.domain_size(p) * g.domain_size(c));
    for (VersionIndex u = 0; u < g.domain_size(p); ++u) {
      for (VersionIndex w = 0; w < g.domain_size(c); ++w) {
        double cg = 0, cb = 0;
        for (const auto& r : records)
          if (r.config.assignment[p] == u && r.config.assignment[c] == w) (r.built ? cg : cb) += 1;
        m.good_edge[e][{u, w}] = (cg + s) / (ng + s * cells);
        m.bad_edge[e][{u, w}] = (cb + s) / (nb + s * cells);
      }
    }
  }
  return m;
}

inline double direct_ei(const DependencyGraph& g, const DirectModel& m, const Configuration& x) {
  double pg = 1.0, pb = 1.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    pg *= m.good_node[i].at(x.assignment[i]);
    pb *= m.bad_node[i].at(x.assignment[i]);
  }
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    const auto [p, c] = g.edges()[e];
    pg *= m.good_edge[e].at({x.assignment[p], x.assignment[c]});
    pb *= m.bad_edge[e].at({x.assignment[p], x.assignment[c]});
  }
  return 1.0 / (m.alpha + (pb / pg) * (1.0 - m.alpha));
}

// Literal prefix evaluation of sum_k P(H_k) (R(H_k) - R(H_{k-1})).
inline double prefix_auprc(const std::vector<bool>& ranked) {
  double total = 0;
  for (bool b : ranked) total += b ? 1 : 0;
  double area = 0, prev_recall = 0, good = 0;
  for (std::size_t k = 1; k <= ranked.size(); ++k) {
    good += ranked[k - 1] ? 1 : 0;
    const double p = good / static_cast<double>(k);
    const double r = good / total;
    area += p * (r - prev_recall);
    prev_recall = r;
  }
  return area;
}

// A configuration violates the rules when any rule's parent and child
// versions are both assigned.
inline bool violates(const PlantedRuleSet& rules, const Configuration& x) {
  for (const auto& r : rules.forbidden) {
    if (x.assignment[r.parent] == r.parent_version && x.assignment[r.child] == r.child_version) return true;
  }
  return false;
}

}  // namespace buildtune::testing
