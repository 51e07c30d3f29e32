#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sonoscan/labeled_set.hpp"

namespace sonoscan {

/// Flat tree node. Internal nodes send x[feature] <= threshold left.
/// Nodes are stored in preorder, so an internal node's left child is the
/// next node and `right` indexes the right child.
struct TreeNode {
  bool leaf = true;
  std::uint32_t feature = 0;
  float threshold = 0.0f;
  std::uint32_t right = 0;
  std::uint32_t count0 = 0;  // leaf class counts
  std::uint32_t count1 = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  /// Majority class of the reached leaf; an even split predicts 1.
  int predict(std::span<const float> x) const;
  std::size_t depth() const;
};

struct RandomForestModel {
  std::vector<DecisionTree> trees;
  std::uint32_t dim = 0;
  std::uint32_t max_depth = 0;
  std::uint64_t seed = 0;

  std::size_t n_trees() const { return trees.size(); }
  /// Fraction of trees voting for class 1.
  double vote_fraction(std::span<const float> x) const;
};

struct ForestParams {
  int n_trees = 100;
  int max_depth = 16;
  bool bootstrap = true;
  /// Features tried per node; 0 means floor(sqrt(dim)).
  std::size_t max_features = 0;
  std::size_t min_samples_split = 2;
};

struct RfTrainConfig {
  std::vector<int> n_trees_grid{50, 100};
  std::vector<int> max_depth_grid{8, 16};
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

/// Gini-split trees over midpoints of sorted unique feature values.
RandomForestModel fit_forest(const LabeledSet& train, const ForestParams& params,
                             std::uint64_t seed);

/// Grid search over (n_trees, max_depth); best validation accuracy wins,
/// ties go to the earlier grid cell.
RandomForestModel train_rf(const LabeledSet& train, const LabeledSet& val,
                           const RfTrainConfig& config);

}  // namespace sonoscan
