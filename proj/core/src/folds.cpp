#include "cxrnet/folds.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cxrnet/error.hpp"
#include "cxrnet/rng.hpp"

namespace cxr::data {

namespace {

struct GroupInfo {
  std::vector<std::size_t> members;
  long size = 0;
  long pos = 0;
};

}  // namespace

FoldPlan plan_folds(std::span<const int> labels, std::span<const std::string> groups,
                    std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (groups.size() != n) throw ShapeError("labels and groups differ in length");
  if (k < 2) throw ParameterError("fold count must be at least 2");
  if (n < k) throw ValidationError("fewer samples than folds");

  std::map<std::string, std::size_t> index;
  std::vector<GroupInfo> info;
  long total_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("fold planning needs 0/1 labels");
    if (groups[i].empty()) throw ValidationError("sample " + std::to_string(i) + " has no group");
    auto [it, fresh] = index.emplace(groups[i], info.size());
    if (fresh) info.emplace_back();
    GroupInfo& g = info[it->second];
    g.members.push_back(i);
    ++g.size;
    g.pos += labels[i];
    total_pos += labels[i];
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  const double size_target = static_cast<double>(n) / static_cast<double>(k);
  const double ratio = static_cast<double>(total_pos) / static_cast<double>(n);
  for (const GroupInfo& g : info)
    if (static_cast<double>(g.size) > size_target)
      plan.warnings.push_back("group of " + std::to_string(g.size) +
                              " samples exceeds 1/k of the data; plan is best effort");

  std::vector<std::size_t> order(info.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return info[a].size > info[b].size; });

  std::vector<long> size(k, 0), pos(k, 0);
  std::vector<std::size_t> fold_of_group(info.size(), 0);
  // size off target, and positives off the global ratio at the fold's size
  auto cost_of = [&](long s, long p) {
    const double ds = static_cast<double>(s) - size_target;
    const double dp = static_cast<double>(p) - ratio * static_cast<double>(s);
    return ds * ds + dp * dp;
  };
  for (std::size_t gi : order) {
    std::size_t best = 0;
    double best_delta = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      const double delta = cost_of(size[f] + info[gi].size, pos[f] + info[gi].pos) - cost_of(size[f], pos[f]);
      if (f == 0 || delta < best_delta - 1e-12) {
        best = f;
        best_delta = delta;
      }
    }
    fold_of_group[gi] = best;
    size[best] += info[gi].size;
    pos[best] += info[gi].pos;
  }

  // local search: improving moves, then improving swaps, until no change
  for (int pass = 0; pass < 100; ++pass) {
    bool improved = false;
    for (std::size_t gi : order) {
      const std::size_t a = fold_of_group[gi];
      const GroupInfo& g = info[gi];
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double before = cost_of(size[a], pos[a]) + cost_of(size[b], pos[b]);
        const double after = cost_of(size[a] - g.size, pos[a] - g.pos) + cost_of(size[b] + g.size, pos[b] + g.pos);
        if (after < before - 1e-9) {
          size[a] -= g.size;
          pos[a] -= g.pos;
          size[b] += g.size;
          pos[b] += g.pos;
          fold_of_group[gi] = b;
          improved = true;
          break;
        }
      }
    }
    for (std::size_t x = 0; x < order.size(); ++x) {
      const std::size_t gx = order[x];
      for (std::size_t y = x + 1; y < order.size(); ++y) {
        const std::size_t gy = order[y];
        const std::size_t a = fold_of_group[gx], b = fold_of_group[gy];
        if (a == b) continue;
        const long ds = info[gy].size - info[gx].size, dp = info[gy].pos - info[gx].pos;
        if (ds == 0 && dp == 0) continue;
        const double before = cost_of(size[a], pos[a]) + cost_of(size[b], pos[b]);
        const double after = cost_of(size[a] + ds, pos[a] + dp) + cost_of(size[b] - ds, pos[b] - dp);
        if (after < before - 1e-9) {
          size[a] += ds;
          pos[a] += dp;
          size[b] -= ds;
          pos[b] -= dp;
          std::swap(fold_of_group[gx], fold_of_group[gy]);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }

  plan.fold_of.assign(n, 0);
  for (std::size_t gi = 0; gi < info.size(); ++gi)
    for (std::size_t m : info[gi].members) plan.fold_of[m] = fold_of_group[gi];
  plan.folds.resize(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      if (plan.fold_of[i] == f) {
        plan.folds[f].val.push_back(i);
        plan.folds[f].val_positives += static_cast<std::size_t>(labels[i]);
      } else {
        plan.folds[f].train.push_back(i);
      }
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    const double vs = static_cast<double>(plan.folds[f].val.size());
    if (std::abs(vs - size_target) > 1.0)
      plan.warnings.push_back("fold " + std::to_string(f) + " holds " + std::to_string(plan.folds[f].val.size()) +
                              " validation samples, target " + std::to_string(size_target));
    const double expected = vs * static_cast<double>(total_pos) / static_cast<double>(n);
    if (std::abs(static_cast<double>(plan.folds[f].val_positives) - expected) > 1.0)
      plan.warnings.push_back("fold " + std::to_string(f) + " class ratio deviates by more than one sample");
  }
  return plan;
}

}  // namespace cxr::data
