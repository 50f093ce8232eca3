#pragma once

// Labelled build records, their JSON Lines persistence, and train/test splits.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "buildtune/configspace.hpp"

namespace buildtune {

inline constexpr const char* kRecordFormat = "buildtune-records";
inline constexpr int kRecordFormatVersion = 1;

struct BuildRecord {
  Configuration config;
  bool built = false;

  friend bool operator==(const BuildRecord&, const BuildRecord&) = default;
};

// Records over one graph with pairwise-distinct configuration digests.
class Dataset {
 public:
  explicit Dataset(std::shared_ptr<const DependencyGraph> graph) : graph_(std::move(graph)) {}

  Dataset(std::shared_ptr<const DependencyGraph> graph, std::vector<BuildRecord> records)
      : graph_(std::move(graph)) {
    records_.reserve(records.size());
    for (auto& r : records) add(std::move(r));
  }

  // Throws DataError for an invalid configuration and
  // DuplicateConfigurationError when the digest is already present.
  void add(BuildRecord record) {
    if (!is_valid_configuration(*graph_, record.config)) {
      throw DataError("configuration does not match the graph");
    }
    ConfigDigest d = ConfigDigester(*graph_)(record.config);
    if (!index_.emplace(d, records_.size()).second) {
      throw DuplicateConfigurationError("duplicate configuration " + d.hex().substr(0, 16));
    }
    records_.push_back(std::move(record));
    digests_.push_back(d);
  }

  const DependencyGraph& graph() const noexcept { return *graph_; }
  const std::shared_ptr<const DependencyGraph>& graph_ptr() const noexcept { return graph_; }
  const std::vector<BuildRecord>& records() const noexcept { return records_; }
  const std::vector<ConfigDigest>& digests() const noexcept { return digests_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  std::optional<std::size_t> find(const ConfigDigest& d) const {
    auto it = index_.find(d);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t good_count() const {
    std::size_t n = 0;
    for (const auto& r : records_) n += r.built ? 1 : 0;
    return n;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return *a.graph_ == *b.graph_ && a.records_ == b.records_;
  }

 private:
  std::shared_ptr<const DependencyGraph> graph_;
  std::vector<BuildRecord> records_;
  std::vector<ConfigDigest> digests_;
  std::unordered_map<ConfigDigest, std::size_t, ConfigDigestHash> index_;
};

struct DatasetSummary {
  std::size_t configs = 0;
  std::size_t good = 0;
  std::size_t deps = 0;

  friend bool operator==(const DatasetSummary&, const DatasetSummary&) = default;
};

inline DatasetSummary summarize(const Dataset& dataset) {
  return {dataset.size(), dataset.good_count(),
          dataset.graph().size() == 0 ? 0 : dataset.graph().size() - 1};
}

inline Json summary_to_json(const DatasetSummary& s) {
  return Json{{"configs", s.configs}, {"good", s.good}, {"deps", s.deps}};
}

inline std::string summary_table(const std::string& name, const DatasetSummary& s) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "Package" << std::right << std::setw(12) << "Configs(#)"
      << std::setw(10) << "Good(#)" << std::setw(10) << "Deps(#)" << '\n';
  out << std::left << std::setw(20) << name << std::right << std::setw(12) << s.configs
      << std::setw(10) << s.good << std::setw(10) << s.deps << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON Lines I/O
//
// Line 1:   {"format": "buildtune-records", "version": 1, "graph": "<path>"}
// Line 2..: {"versions": {"pkg": "label", ...}, "built": true}
//
// The graph path is resolved relative to the record file's directory.

inline Json record_to_json(const DependencyGraph& graph, const BuildRecord& record) {
  return Json{{"versions", configuration_to_json(graph, record.config)}, {"built", record.built}};
}

inline void write_dataset(std::ostream& out, const Dataset& dataset, const std::string& graph_ref) {
  out << Json{{"format", kRecordFormat}, {"version", kRecordFormatVersion}, {"graph", graph_ref}}.dump()
      << '\n';
  for (const auto& r : dataset.records()) out << record_to_json(dataset.graph(), r).dump() << '\n';
}

inline void save_dataset(const Dataset& dataset, const std::string& path, const std::string& graph_ref) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file '" + path + "'");
  write_dataset(out, dataset, graph_ref);
}

// Reads records for an already-loaded graph. The header line is checked but
// its graph reference is ignored.
inline Dataset read_records(std::istream& in, std::shared_ptr<const DependencyGraph> graph,
                            bool expect_header = true) {
  Dataset dataset(graph);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = !expect_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json doc;
    try {
      doc = Json::parse(line);
    } catch (const Json::exception& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!header_seen) {
      if (!doc.is_object() || doc.value("format", "") != kRecordFormat) {
        throw ParseError(line_no, "missing record-file header");
      }
      if (doc.value("version", 0) != kRecordFormatVersion) {
        throw ParseError(line_no, "unsupported record format version");
      }
      header_seen = true;
      continue;
    }
    if (!doc.is_object() || !doc.contains("versions") || !doc.contains("built") ||
        !doc["built"].is_boolean()) {
      throw ParseError(line_no, "record needs \"versions\" object and boolean \"built\"");
    }
    try {
      dataset.add({configuration_from_json(*graph, doc["versions"]), doc["built"].get<bool>()});
    } catch (const DuplicateConfigurationError& e) {
      throw DuplicateConfigurationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!header_seen) throw ParseError(line_no + 1, "missing record-file header");
  return dataset;
}

inline std::string read_graph_ref(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing record-file header");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ParseError(1, std::string("invalid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("graph") || !header["graph"].is_string()) {
    throw ParseError(1, "header must name the graph file");
  }
  return header["graph"].get<std::string>();
}

inline Dataset load_dataset(const std::string& path,
                            std::shared_ptr<const DependencyGraph> graph) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  return read_records(in, std::move(graph));
}

inline Dataset load_dataset(const std::string& path) {
  std::filesystem::path ref = read_graph_ref(path);
  if (ref.is_relative()) ref = std::filesystem::path(path).parent_path() / ref;
  auto graph = std::make_shared<const DependencyGraph>(load_graph(ref.string()));
  return load_dataset(path, std::move(graph));
}

// ---------------------------------------------------------------------------

// Seeded permutation, then the first round-half-up(fraction * N) records go
// to the training side. Both sides keep the permuted order.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double train_fraction,
                                                    Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  }
  if (dataset.empty()) throw std::invalid_argument("cannot split an empty dataset");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(dataset.size()) + 0.5));
  Dataset train(dataset.graph_ptr()), test(dataset.graph_ptr());
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_train ? train : test).add(dataset.records()[order[k]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace buildtune
