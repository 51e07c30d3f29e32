#include "sonoscan/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonoscan/random.hpp"

namespace sonoscan {

int DecisionTree::predict(std::span<const float> x) const {
  std::size_t i = 0;
  while (!nodes[i].leaf) {
    i = x[nodes[i].feature] <= nodes[i].threshold ? i + 1 : nodes[i].right;
  }
  return nodes[i].count1 >= nodes[i].count0 ? 1 : 0;
}

std::size_t DecisionTree::depth() const {
  // Preorder walk with an explicit stack of (node, depth).
  std::size_t deepest = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (!nodes[i].leaf) {
      stack.push_back({i + 1, d + 1});
      stack.push_back({nodes[i].right, d + 1});
    }
  }
  return deepest;
}

double RandomForestModel::vote_fraction(std::span<const float> x) const {
  if (x.size() != dim) {
    throw DataError("forest expects dim " + std::to_string(dim) + ", got " +
                    std::to_string(x.size()));
  }
  if (trees.empty()) throw DataError("forest has no trees");
  std::size_t votes = 0;
  for (const auto& tree : trees) votes += static_cast<std::size_t>(tree.predict(x));
  return static_cast<double>(votes) / static_cast<double>(trees.size());
}

namespace {

std::uint64_t tree_seed(std::uint64_t seed, std::size_t tree) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tree + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SplitChoice {
  bool found = false;
  std::uint32_t feature = 0;
  float threshold = 0.0f;
  double impurity = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const LabeledSet& data, const ForestParams& params, std::uint64_t seed)
      : data_(data), params_(params), rng_(seed), features_(data.X.dim) {
    std::iota(features_.begin(), features_.end(), 0u);
    max_features_ = params.max_features
                        ? std::min<std::size_t>(params.max_features, data.X.dim)
                        : std::max<std::size_t>(1, static_cast<std::size_t>(
                                                       std::sqrt(static_cast<double>(data.X.dim))));
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    grow(tree, samples, 0);
    return tree;
  }

 private:
  void grow(DecisionTree& tree, std::vector<std::size_t>& samples, int depth) {
    std::uint32_t c1 = 0;
    for (auto s : samples) c1 += static_cast<std::uint32_t>(data_.y[s]);
    const auto c0 = static_cast<std::uint32_t>(samples.size()) - c1;

    const std::size_t self = tree.nodes.size();
    tree.nodes.push_back(TreeNode{true, 0, 0.0f, 0, c0, c1});
    if (c0 == 0 || c1 == 0 || depth >= params_.max_depth ||
        samples.size() < params_.min_samples_split) {
      return;
    }
    const SplitChoice split = find_split(samples, c0, c1);
    if (!split.found) return;

    std::vector<std::size_t> left, right;
    for (auto s : samples) {
      (data_.X.row(s)[split.feature] <= split.threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();

    tree.nodes[self].leaf = false;
    tree.nodes[self].feature = split.feature;
    tree.nodes[self].threshold = split.threshold;
    grow(tree, left, depth + 1);
    tree.nodes[self].right = static_cast<std::uint32_t>(tree.nodes.size());
    grow(tree, right, depth + 1);
  }

  // Features are drawn without replacement; if none of the first
  // max_features admits a split, drawing continues until one does.
  SplitChoice find_split(const std::vector<std::size_t>& samples, std::uint32_t c0, std::uint32_t c1) {
    SplitChoice best;
    const std::size_t dim = features_.size();
    std::size_t tried = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      if (tried >= max_features_ && best.found) break;
      const std::size_t j = k + static_cast<std::size_t>(rng_.below(dim - k));
      std::swap(features_[k], features_[j]);
      const std::uint32_t feature = features_[k];
      ++tried;
      evaluate_feature(samples, feature, c0, c1, best);
    }
    return best;
  }

  void evaluate_feature(const std::vector<std::size_t>& samples, std::uint32_t feature,
                        std::uint32_t c0, std::uint32_t c1, SplitChoice& best) {
    column_.clear();
    for (auto s : samples) column_.push_back({data_.X.row(s)[feature], data_.y[s]});
    std::sort(column_.begin(), column_.end(), [](const auto& a, const auto& b) {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    });
    const double n = static_cast<double>(samples.size());
    double left0 = 0, left1 = 0;
    for (std::size_t i = 0; i + 1 < column_.size(); ++i) {
      (column_[i].second == 1 ? left1 : left0) += 1;
      const float lo = column_[i].first;
      const float hi = column_[i + 1].first;
      if (!(lo < hi)) continue;
      const double nl = left0 + left1;
      const double nr = n - nl;
      const double r0 = c0 - left0, r1 = c1 - left1;
      const double gini_l = 1.0 - (left0 * left0 + left1 * left1) / (nl * nl);
      const double gini_r = 1.0 - (r0 * r0 + r1 * r1) / (nr * nr);
      const double impurity = (nl * gini_l + nr * gini_r) / n;
      if (!best.found || impurity < best.impurity) {
        float threshold = lo + (hi - lo) / 2.0f;
        if (!(threshold < hi)) threshold = lo;
        best = {true, feature, threshold, impurity};
      }
    }
  }

  const LabeledSet& data_;
  const ForestParams& params_;
  Rng rng_;
  std::vector<std::uint32_t> features_;
  std::size_t max_features_;
  std::vector<std::pair<float, int>> column_;
};

}  // namespace

RandomForestModel fit_forest(const LabeledSet& train, const ForestParams& params,
                             std::uint64_t seed) {
  require_two_classes(train, "training");
  if (params.n_trees < 1) throw ConfigError("forest needs at least one tree");
  if (params.max_depth < 1) throw ConfigError("forest max_depth must be >= 1");

  RandomForestModel model;
  model.dim = train.X.dim;
  model.max_depth = static_cast<std::uint32_t>(params.max_depth);
  model.seed = seed;
  const std::size_t n = train.size();
  for (int t = 0; t < params.n_trees; ++t) {
    const std::uint64_t s = tree_seed(seed, static_cast<std::size_t>(t));
    Rng sampler(s);
    std::vector<std::size_t> samples(n);
    if (params.bootstrap) {
      for (auto& idx : samples) idx = static_cast<std::size_t>(sampler.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    TreeBuilder builder(train, params, sampler.fork());
    model.trees.push_back(builder.build(std::move(samples)));
  }
  return model;
}

RandomForestModel train_rf(const LabeledSet& train, const LabeledSet& val,
                           const RfTrainConfig& config) {
  require_two_classes(train, "training");
  val.validate();
  if (config.n_trees_grid.empty() || config.max_depth_grid.empty()) {
    throw ConfigError("random forest grid is empty");
  }
  if (val.X.dim != train.X.dim) throw DataError("train and validation dims differ");

  // Tree t depends only on (seed, t), so smaller forests are prefixes of the
  // largest one and each depth needs a single fit.
  const int most_trees = *std::max_element(config.n_trees_grid.begin(), config.n_trees_grid.end());
  RandomForestModel best;
  double best_accuracy = -1.0;
  for (int depth : config.max_depth_grid) {
    ForestParams params;
    params.n_trees = most_trees;
    params.max_depth = depth;
    params.bootstrap = config.bootstrap;
    auto full = fit_forest(train, params, config.seed);

    std::vector<std::vector<int>> tree_votes(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) {
      tree_votes[i].reserve(full.trees.size());
      for (const auto& tree : full.trees) tree_votes[i].push_back(tree.predict(val.X.row(i)));
    }
    for (int n_trees : config.n_trees_grid) {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const int votes = std::accumulate(tree_votes[i].begin(), tree_votes[i].begin() + n_trees, 0);
        const int label = 2 * votes >= n_trees ? 1 : 0;
        if (label == val.y[i]) ++correct;
      }
      const double accuracy = val.size() ? static_cast<double>(correct) / val.size() : 0.0;
      if (accuracy > best_accuracy) {
        best_accuracy = accuracy;
        best = full;
        best.trees.resize(static_cast<std::size_t>(n_trees));
      }
    }
  }
  return best;
}

}  // namespace sonoscan
