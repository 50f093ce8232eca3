#pragma once

// Dependency graphs, version domains, configurations and their digests.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "buildtune/error.hpp"
#include "buildtune/rng.hpp"

namespace buildtune {

using VersionIndex = std::uint32_t;
using PackageIndex = std::size_t;
using Json = nlohmann::json;

// Dependency arc, parent depends on child. Factor and importance code treats
// the pair as unordered; the direction is kept for labelling.
struct Edge {
  PackageIndex parent = 0;
  PackageIndex child = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

class DependencyGraph {
 public:
  DependencyGraph() = default;
  DependencyGraph(std::vector<std::string> packages,
                  std::vector<std::vector<std::string>> domains,
                  std::vector<Edge> edges, PackageIndex root)
      : packages_(std::move(packages)),
        domains_(std::move(domains)),
        edges_(std::move(edges)),
        root_(root) {
    for (PackageIndex i = 0; i < packages_.size(); ++i) {
      package_lookup_.emplace(packages_[i], i);
    }
    version_lookup_.resize(domains_.size());
    for (PackageIndex i = 0; i < domains_.size(); ++i) {
      for (VersionIndex v = 0; v < domains_[i].size(); ++v) {
        version_lookup_[i].emplace(domains_[i][v], v);
      }
    }
  }

  std::size_t size() const noexcept { return packages_.size(); }
  const std::vector<std::string>& packages() const noexcept { return packages_; }
  const std::vector<std::vector<std::string>>& domains() const noexcept { return domains_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  PackageIndex root() const noexcept { return root_; }

  const std::string& name(PackageIndex i) const { return packages_.at(i); }
  const std::vector<std::string>& domain(PackageIndex i) const { return domains_.at(i); }
  std::size_t domain_size(PackageIndex i) const { return domains_.at(i).size(); }

  std::optional<PackageIndex> find_package(const std::string& name) const {
    auto it = package_lookup_.find(name);
    if (it == package_lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<VersionIndex> find_version(PackageIndex i, const std::string& label) const {
    if (i >= version_lookup_.size()) return std::nullopt;
    auto it = version_lookup_[i].find(label);
    if (it == version_lookup_[i].end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> find_edge(PackageIndex parent, PackageIndex child) const {
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      if (edges_[e].parent == parent && edges_[e].child == child) return e;
    }
    return std::nullopt;
  }

  // Same packages, domains, edges and root. Lookup tables are derived.
  friend bool operator==(const DependencyGraph& a, const DependencyGraph& b) {
    return a.packages_ == b.packages_ && a.domains_ == b.domains_ &&
           a.edges_ == b.edges_ && a.root_ == b.root_;
  }

 private:
  std::vector<std::string> packages_;
  std::vector<std::vector<std::string>> domains_;
  std::vector<Edge> edges_;
  PackageIndex root_ = 0;
  std::unordered_map<std::string, PackageIndex> package_lookup_;
  std::vector<std::unordered_map<std::string, VersionIndex>> version_lookup_;
};

struct Configuration {
  std::vector<VersionIndex> assignment;

  friend auto operator<=>(const Configuration&, const Configuration&) = default;
};

struct ConfigDigest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (auto b : bytes) {
      out.push_back(kDigits[b >> 4]);
      out.push_back(kDigits[b & 0xf]);
    }
    return out;
  }

  friend auto operator<=>(const ConfigDigest&, const ConfigDigest&) = default;
};

struct ConfigDigestHash {
  std::size_t operator()(const ConfigDigest& d) const noexcept {
    std::size_t h = 0;
    for (int i = 0; i < 8; ++i) h = (h << 8) | d.bytes[i];
    return h;
  }
};

// ---------------------------------------------------------------------------
// Validation

enum class GraphIssue {
  kNone,
  kInvalidRoot,
  kEmptyDomain,
  kDuplicateVersion,
  kDuplicatePackage,
  kDanglingEdge,
  kSelfEdge,
  kCycle,
  kUnreachable,
};

inline const char* to_string(GraphIssue issue) {
  switch (issue) {
    case GraphIssue::kNone: return "ok";
    case GraphIssue::kInvalidRoot: return "invalid root";
    case GraphIssue::kEmptyDomain: return "empty domain";
    case GraphIssue::kDuplicateVersion: return "duplicate version";
    case GraphIssue::kDuplicatePackage: return "duplicate package";
    case GraphIssue::kDanglingEdge: return "dangling edge";
    case GraphIssue::kSelfEdge: return "self-edge";
    case GraphIssue::kCycle: return "cycle";
    case GraphIssue::kUnreachable: return "unreachable package";
  }
  return "unknown";
}

struct GraphValidation {
  GraphIssue issue = GraphIssue::kNone;
  // Offending package index (or edge position for edge issues).
  std::size_t index = 0;
  std::string message;

  bool ok() const noexcept { return issue == GraphIssue::kNone; }
  explicit operator bool() const noexcept { return ok(); }
};

// Checks every graph invariant and reports the first one violated, in the
// order: root, domains, package names, edges, acyclicity, reachability.
inline GraphValidation validate_graph(const DependencyGraph& graph) {
  auto fail = [](GraphIssue issue, std::size_t index, std::string msg) {
    return GraphValidation{issue, index, std::string(to_string(issue)) + ": " + msg};
  };
  const std::size_t n = graph.size();
  if (n == 0 || graph.root() >= n) {
    return fail(GraphIssue::kInvalidRoot, graph.root(), "root index out of range");
  }
  if (graph.domains().size() != n) {
    return fail(GraphIssue::kEmptyDomain, std::min(n, graph.domains().size()),
                "domain count does not match package count");
  }
  for (PackageIndex i = 0; i < n; ++i) {
    const auto& dom = graph.domain(i);
    if (dom.empty()) {
      return fail(GraphIssue::kEmptyDomain, i, "at package " + std::to_string(i));
    }
    std::unordered_set<std::string> seen;
    for (const auto& label : dom) {
      if (!seen.insert(label).second) {
        return fail(GraphIssue::kDuplicateVersion, i,
                    "'" + label + "' at package " + std::to_string(i));
      }
    }
  }
  {
    std::unordered_set<std::string> seen;
    for (PackageIndex i = 0; i < n; ++i) {
      if (!seen.insert(graph.name(i)).second) {
        return fail(GraphIssue::kDuplicatePackage, i, "'" + graph.name(i) + "'");
      }
    }
  }
  for (std::size_t e = 0; e < graph.edges().size(); ++e) {
    const Edge& edge = graph.edges()[e];
    if (edge.parent >= n || edge.child >= n) {
      return fail(GraphIssue::kDanglingEdge, e,
                  "(" + std::to_string(edge.parent) + "," + std::to_string(edge.child) + ")");
    }
    if (edge.parent == edge.child) {
      return fail(GraphIssue::kSelfEdge, edge.parent, "at package " + std::to_string(edge.parent));
    }
  }
  std::vector<std::vector<PackageIndex>> children(n);
  std::vector<std::size_t> indegree(n, 0);
  for (const Edge& edge : graph.edges()) {
    children[edge.parent].push_back(edge.child);
    ++indegree[edge.child];
  }
  // Kahn's algorithm; whatever is left over sits on a cycle.
  {
    std::vector<std::size_t> deg = indegree;
    std::vector<PackageIndex> stack;
    for (PackageIndex i = 0; i < n; ++i) {
      if (deg[i] == 0) stack.push_back(i);
    }
    std::size_t visited = 0;
    while (!stack.empty()) {
      PackageIndex u = stack.back();
      stack.pop_back();
      ++visited;
      for (PackageIndex c : children[u]) {
        if (--deg[c] == 0) stack.push_back(c);
      }
    }
    if (visited != n) {
      for (PackageIndex i = 0; i < n; ++i) {
        if (deg[i] != 0) {
          return fail(GraphIssue::kCycle, i, "through package " + std::to_string(i));
        }
      }
    }
  }
  std::vector<bool> reached(n, false);
  std::vector<PackageIndex> stack{graph.root()};
  reached[graph.root()] = true;
  while (!stack.empty()) {
    PackageIndex u = stack.back();
    stack.pop_back();
    for (PackageIndex c : children[u]) {
      if (!reached[c]) {
        reached[c] = true;
        stack.push_back(c);
      }
    }
  }
  for (PackageIndex i = 0; i < n; ++i) {
    if (!reached[i]) {
      return fail(GraphIssue::kUnreachable, i, "package " + std::to_string(i));
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Space

inline boost::multiprecision::cpp_int space_size(const DependencyGraph& graph) {
  boost::multiprecision::cpp_int total = 1;
  for (const auto& dom : graph.domains()) total *= dom.size();
  return total;
}

// Space size when it fits in 64 bits.
inline std::optional<std::uint64_t> space_size_u64(const DependencyGraph& graph) {
  auto total = space_size(graph);
  if (total > std::numeric_limits<std::uint64_t>::max()) return std::nullopt;
  return total.convert_to<std::uint64_t>();
}

inline bool is_valid_configuration(const DependencyGraph& graph, const Configuration& config) {
  if (config.assignment.size() != graph.size()) return false;
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    if (config.assignment[i] >= graph.domain_size(i)) return false;
  }
  return true;
}

// One independent uniform draw per package, in package index order.
inline Configuration random_configuration(const DependencyGraph& graph, Rng& rng) {
  Configuration config;
  config.assignment.reserve(graph.size());
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    config.assignment.push_back(static_cast<VersionIndex>(rng.uniform_index(graph.domain_size(i))));
  }
  return config;
}

// All configurations in mixed-radix order (last package varies fastest).
// Throws when the space exceeds `limit`.
inline std::vector<Configuration> enumerate_configurations(const DependencyGraph& graph,
                                                           std::uint64_t limit = 1'000'000) {
  auto total = space_size_u64(graph);
  if (!total || *total > limit) {
    throw std::length_error("configuration space too large to enumerate");
  }
  std::vector<Configuration> out;
  out.reserve(*total);
  Configuration current{std::vector<VersionIndex>(graph.size(), 0)};
  for (std::uint64_t k = 0; k < *total; ++k) {
    out.push_back(current);
    for (std::size_t i = graph.size(); i-- > 0;) {
      if (++current.assignment[i] < graph.domain_size(i)) break;
      current.assignment[i] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Digests

namespace detail {

inline void append_u64_le(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_field(std::string& buf, const std::string& s) {
  append_u64_le(buf, s.size());
  buf.append(s);
}

inline ConfigDigest sha256(const std::string& data) {
  ConfigDigest d;
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), d.bytes.data(), &len) != 1 || len != d.bytes.size()) {
    throw std::runtime_error("sha256 failed");
  }
  return d;
}

}  // namespace detail

// Digest of a configuration keyed on package names, so the result does not
// depend on the order in which packages are declared. Input layout:
//   u64 package-count, then per package in lexicographic name order
//   u64 len, name bytes, u64 len, version-label bytes
// with all integers little-endian; hashed with SHA-256.
class ConfigDigester {
 public:
  explicit ConfigDigester(const DependencyGraph& graph) : graph_(&graph) {
    order_.resize(graph.size());
    for (PackageIndex i = 0; i < order_.size(); ++i) order_[i] = i;
    std::sort(order_.begin(), order_.end(), [&](PackageIndex a, PackageIndex b) {
      return graph.name(a) < graph.name(b);
    });
  }

  ConfigDigest operator()(const Configuration& config) const {
    std::string buf;
    buf.reserve(16 * order_.size() + 32);
    detail::append_u64_le(buf, order_.size());
    for (PackageIndex i : order_) {
      detail::append_field(buf, graph_->name(i));
      detail::append_field(buf, graph_->domain(i).at(config.assignment.at(i)));
    }
    return detail::sha256(buf);
  }

 private:
  const DependencyGraph* graph_;
  std::vector<PackageIndex> order_;
};

inline ConfigDigest digest(const DependencyGraph& graph, const Configuration& config) {
  return ConfigDigester(graph)(config);
}

// ---------------------------------------------------------------------------
// JSON

inline Json graph_to_json(const DependencyGraph& graph) {
  Json packages = Json::array();
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    packages.push_back({{"name", graph.name(i)}, {"versions", graph.domain(i)}});
  }
  Json edges = Json::array();
  for (const Edge& e : graph.edges()) {
    edges.push_back(Json::array({graph.name(e.parent), graph.name(e.child)}));
  }
  return Json{{"root", graph.name(graph.root())}, {"packages", packages}, {"edges", edges}};
}

// Parses and validates a graph document. Throws DataError.
inline DependencyGraph graph_from_json(const Json& doc) {
  try {
    std::vector<std::string> names;
    std::vector<std::vector<std::string>> domains;
    for (const auto& p : doc.at("packages")) {
      names.push_back(p.at("name").get<std::string>());
      domains.push_back(p.at("versions").get<std::vector<std::string>>());
    }
    std::unordered_map<std::string, PackageIndex> index;
    for (PackageIndex i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    auto lookup = [&](const std::string& name) {
      auto it = index.find(name);
      if (it == index.end()) throw DataError("unknown package '" + name + "' in graph");
      return it->second;
    };
    std::vector<Edge> edges;
    for (const auto& e : doc.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw DataError("edge must be a [parent, child] pair");
      edges.push_back({lookup(e[0].get<std::string>()), lookup(e[1].get<std::string>())});
    }
    PackageIndex root = lookup(doc.at("root").get<std::string>());
    DependencyGraph graph(std::move(names), std::move(domains), std::move(edges), root);
    if (auto v = validate_graph(graph); !v) throw DataError("invalid graph: " + v.message);
    return graph;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed graph document: ") + e.what());
  }
}

inline DependencyGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("graph file '" + path + "': " + e.what());
  }
  return graph_from_json(doc);
}

inline void save_graph(const DependencyGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write graph file '" + path + "'");
  out << graph_to_json(graph).dump(2) << '\n';
}

// {"pkg": "version", ...}; keys come out sorted.
inline Json configuration_to_json(const DependencyGraph& graph, const Configuration& config) {
  Json obj = Json::object();
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    obj[graph.name(i)] = graph.domain(i).at(config.assignment.at(i));
  }
  return obj;
}

inline Configuration configuration_from_json(const DependencyGraph& graph, const Json& obj) {
  if (!obj.is_object()) throw DataError("versions must be an object");
  Configuration config{std::vector<VersionIndex>(graph.size(), 0)};
  std::vector<bool> seen(graph.size(), false);
  for (const auto& [name, label] : obj.items()) {
    auto i = graph.find_package(name);
    if (!i) throw DataError("unknown package '" + name + "'");
    if (!label.is_string()) throw DataError("version of '" + name + "' must be a string");
    auto v = graph.find_version(*i, label.get<std::string>());
    if (!v) {
      throw DataError("unknown version '" + label.get<std::string>() + "' for package '" + name + "'");
    }
    config.assignment[*i] = *v;
    seen[*i] = true;
  }
  for (PackageIndex i = 0; i < graph.size(); ++i) {
    if (!seen[i]) throw DataError("missing version for package '" + graph.name(i) + "'");
  }
  return config;
}

}  // namespace buildtune
