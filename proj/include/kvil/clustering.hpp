#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

namespace kvil {

//! Single-linkage agglomerative clustering cut at `cutoff`: two items end up
//! in the same cluster iff they are joined by a chain of pairs with
//! distance <= cutoff. Clusters are sorted lists of item indices, ordered by
//! their smallest member.
template<class Item, class Distance>
std::vector<std::vector<std::size_t>>
single_linkage(const std::vector<Item>& items, Distance distance, double cutoff)
{
  const std::size_t n = items.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (distance(items[a], items[b]) <= cutoff) {
        const auto ra = find(a);
        const auto rb = find(b);
        if (ra != rb) {
          parent[std::max(ra, rb)] = std::min(ra, rb);
        }
      }
    }
  }
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> slot(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto r = find(a);
    if (slot[r] == n) {
      slot[r] = clusters.size();
      clusters.emplace_back();
    }
    clusters[slot[r]].push_back(a);
  }
  return clusters;
}

} // namespace kvil
