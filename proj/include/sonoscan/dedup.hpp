#pragma once

#include <span>
#include <string>
#include <vector>

#include "sonoscan/embedding_store.hpp"

namespace sonoscan {

/// Disjoint sets with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n);
  std::size_t find(std::size_t x);
  bool unite(std::size_t a, std::size_t b);

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

struct SimilarPair {
  std::size_t i;  // index into the id list, i < j
  std::size_t j;
  double similarity;
};

inline constexpr double kDefaultDedupTheta = 0.92;

/// All index pairs (i < j) with similarity strictly above theta, in (i, j)
/// order. `rows[k]` is the matrix row of item k.
std::vector<SimilarPair> pair_similarities(const EmbeddingMatrix& matrix,
                                           std::span<const std::size_t> rows, double theta);

struct DupReport {
  std::vector<std::vector<std::string>> components;  // each sorted; ordered by representative
  std::vector<std::string> kept;                     // sorted
  std::vector<std::string> removed;                  // sorted
  double theta = kDefaultDedupTheta;
};

/// Connected components of the "similarity > theta" graph; the
/// lexicographically smallest id of each component is kept.
DupReport deduplicate(std::span<const std::string> ids, const EmbeddingMatrix& matrix,
                      std::span<const std::size_t> rows, double theta = kDefaultDedupTheta);

/// Same, with ids[k] living in matrix row k.
DupReport deduplicate(std::span<const std::string> ids, const EmbeddingMatrix& matrix,
                      double theta = kDefaultDedupTheta);

}  // namespace sonoscan
