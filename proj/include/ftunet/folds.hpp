#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ftunet/dataset.hpp"
#include "ftunet/error.hpp"
#include "ftunet/hash.hpp"
#include "ftunet/random.hpp"
#include "ftunet/sample.hpp"

namespace ftunet {

struct FoldAssignment {
  int fold_count = 0;
  std::map<std::string, int> assignment;  // original id -> fold in [1, fold_count]

  int fold_of(const std::string& origin_id) const {
    auto it = assignment.find(origin_id);
    if (it == assignment.end()) throw ArgumentError("sample " + origin_id + " has no fold");
    return it->second;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(fold_count, 0);
    for (const auto& [id, f] : assignment) ++s[f - 1];
    return s;
  }
};

// Balanced seeded partition: ids are sorted, shuffled, and dealt into
// consecutive chunks, the first (n mod k) folds holding one extra.
inline FoldAssignment make_folds(std::vector<std::string> ids, int fold_count, std::uint64_t seed) {
  if (fold_count < 2) throw ArgumentError("fold_count must be >= 2");
  if (static_cast<std::size_t>(fold_count) > ids.size())
    throw ArgumentError("fold_count " + std::to_string(fold_count) + " exceeds the " + std::to_string(ids.size()) +
                        " originals");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ArgumentError("duplicate sample ids");
  Rng rng(derive_seed({seed, hash_string("folds")}));
  rng.shuffle(ids);
  FoldAssignment a;
  a.fold_count = fold_count;
  const std::size_t base = ids.size() / fold_count, extra = ids.size() % fold_count;
  std::size_t pos = 0;
  for (int f = 1; f <= fold_count; ++f) {
    const std::size_t n = base + (static_cast<std::size_t>(f) <= extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) a.assignment[ids[pos++]] = f;
  }
  return a;
}

inline FoldAssignment make_folds(const SampleSet& originals, int fold_count, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : originals) {
    if (!s.is_original()) throw ArgumentError("folds are assigned before augmentation; got " + s.id);
    ids.push_back(s.id);
  }
  return make_folds(std::move(ids), fold_count, seed);
}

inline FoldAssignment make_folds(const DatasetManifest& m, int fold_count, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& r : m.records) {
    if (r.id != r.origin_id) throw ArgumentError("folds are assigned before augmentation; got " + r.id);
    ids.push_back(r.id);
  }
  return make_folds(std::move(ids), fold_count, seed);
}

// Samples (original or augmented) whose origin lies outside `fold`.
inline SampleSet training_split(const SampleSet& samples, const FoldAssignment& a, int fold) {
  SampleSet out;
  for (const auto& s : samples)
    if (a.fold_of(s.origin_id) != fold) out.push_back(s);
  return out;
}

// Originals assigned to `fold`; augmented copies never validate.
inline SampleSet validation_split(const SampleSet& samples, const FoldAssignment& a, int fold) {
  SampleSet out;
  for (const auto& s : samples)
    if (s.is_original() && a.fold_of(s.origin_id) == fold) out.push_back(s);
  return out;
}

}  // namespace ftunet
