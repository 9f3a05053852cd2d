#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cxr::data {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::size_t val_positives = 0;
};

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold_of;  // validation fold of every sample
  std::vector<Fold> folds;
  std::vector<std::string> warnings;
};

// Assigns whole groups to k validation folds so that every fold holds about
// N/k samples with positives in the global proportion P/N. Groups are shuffled by `seed`, placed
// greedily largest first, then improved by single-group moves and pairwise
// swaps. Targets that cannot be met (e.g. a group larger than N/k) produce
// warnings rather than errors.
FoldPlan plan_folds(std::span<const int> labels, std::span<const std::string> groups,
                    std::size_t k, std::uint64_t seed);

}  // namespace cxr::data
