#pragma once

#include <span>
#include <unordered_set>
#include <vector>

#include "buildtune/dataset.hpp"

namespace buildtune {

// Evaluated configurations in evaluation order. A configuration is never
// recorded twice.
class ObservationHistory {
 public:
  void add(BuildRecord record, const ConfigDigest& d) {
    if (!seen_.insert(d).second) {
      throw DuplicateConfigurationError("configuration " + d.hex().substr(0, 16) +
                                        " already evaluated");
    }
    entries_.push_back(std::move(record));
    digests_.push_back(d);
  }

  bool contains(const ConfigDigest& d) const { return seen_.contains(d); }

  std::span<const BuildRecord> records() const noexcept { return entries_; }
  const std::vector<ConfigDigest>& digests() const noexcept { return digests_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  std::size_t good_count() const {
    std::size_t n = 0;
    for (const auto& r : entries_) n += r.built ? 1 : 0;
    return n;
  }

  // Number of successes among the first k entries.
  std::size_t good_count_prefix(std::size_t k) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < k && i < entries_.size(); ++i) n += entries_[i].built ? 1 : 0;
    return n;
  }

 private:
  std::vector<BuildRecord> entries_;
  std::vector<ConfigDigest> digests_;
  std::unordered_set<ConfigDigest, ConfigDigestHash> seen_;
};

}  // namespace buildtune
