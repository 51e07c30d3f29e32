#include "sonoscan/dedup.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_set>

namespace sonoscan {

UnionFind::UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
  std::iota(parent_.begin(), parent_.end(), 0);
}

std::size_t UnionFind::find(std::size_t x) {
  while (parent_[x] != x) {
    parent_[x] = parent_[parent_[x]];
    x = parent_[x];
  }
  return x;
}

bool UnionFind::unite(std::size_t a, std::size_t b) {
  a = find(a);
  b = find(b);
  if (a == b) return false;
  if (size_[a] < size_[b]) std::swap(a, b);
  parent_[b] = a;
  size_[a] += size_[b];
  return true;
}

std::vector<SimilarPair> pair_similarities(const EmbeddingMatrix& matrix,
                                           std::span<const std::size_t> rows, double theta) {
  for (auto r : rows) {
    if (r >= matrix.count) {
      throw DataError("row " + std::to_string(r) + " outside a matrix of " +
                      std::to_string(matrix.count) + " rows");
    }
  }
  std::vector<SimilarPair> pairs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto a = matrix.row(rows[i]);
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double sim = dot(a, matrix.row(rows[j]));
      if (sim > theta) pairs.push_back({i, j, sim});
    }
  }
  return pairs;
}

DupReport deduplicate(std::span<const std::string> ids, const EmbeddingMatrix& matrix,
                      std::span<const std::size_t> rows, double theta) {
  if (ids.size() != rows.size()) {
    throw DataError(std::to_string(ids.size()) + " ids but " + std::to_string(rows.size()) +
                    " rows");
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw DataError("duplicate id " + id + " in dedup input");
    }
  }
  UnionFind sets(ids.size());
  for (const auto& p : pair_similarities(matrix, rows, theta)) sets.unite(p.i, p.j);

  std::map<std::size_t, std::vector<std::string>> by_root;
  for (std::size_t k = 0; k < ids.size(); ++k) by_root[sets.find(k)].push_back(ids[k]);

  DupReport report;
  report.theta = theta;
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    report.components.push_back(std::move(members));
  }
  std::sort(report.components.begin(), report.components.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (const auto& component : report.components) {
    report.kept.push_back(component.front());
    report.removed.insert(report.removed.end(), component.begin() + 1, component.end());
  }
  std::sort(report.removed.begin(), report.removed.end());
  return report;
}

DupReport deduplicate(std::span<const std::string> ids, const EmbeddingMatrix& matrix,
                      double theta) {
  std::vector<std::size_t> rows(ids.size());
  std::iota(rows.begin(), rows.end(), 0);
  return deduplicate(ids, matrix, rows, theta);
}

}  // namespace sonoscan
