#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sonoscan/embedding_store.hpp"

namespace sonoscan {

/// Points as rows.
using PointMatrix = Eigen::MatrixXd;

PointMatrix to_points(const EmbeddingMatrix& m);

// ---------------------------------------------------------------- PCA

struct PcaResult {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;          // d x dim, rows are unit principal axes
  Eigen::VectorXd explained_variance;  // d, descending
  PointMatrix projected;               // count x d
};

/// Projects centered data onto the top-d covariance eigenvectors. Each axis
/// is signed so its largest-magnitude entry is positive. Requires d < count
/// and d <= dim.
PcaResult pca_reduce(const PointMatrix& points, int d = 5);

// ---------------------------------------------------------------- HDBSCAN

struct HdbscanParams {
  int min_cluster_size = 20;
  int min_samples = 0;  // 0 means "same as min_cluster_size"
  /// Lets the root of the condensed tree be selected as the only cluster.
  bool allow_single_cluster = false;
  /// Clusters born below this distance are merged into their ancestor.
  double cluster_selection_epsilon = 0.0;
};

struct MstEdge {
  std::size_t a;
  std::size_t b;
  double distance;
};

/// One merge of the single-linkage dendrogram. Node ids < n are points;
/// merge i creates node n + i.
struct LinkageStep {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

/// Edge of the condensed tree. Cluster ids start at n (n = root); child ids
/// below n are points that fell out of `parent` at `lambda` = 1/distance.
struct CondensedEdge {
  std::size_t parent;
  std::size_t child;
  double lambda;
  std::size_t child_size;
};

struct ClusterAssignment {
  std::vector<int> labels;  // -1 = noise
  int n_clusters = 0;
  int min_cluster_size = 0;
};

/// Distance to the k-th nearest neighbor, counting the point itself (so
/// k = 1 gives 0). k is clipped to the point count.
std::vector<double> core_distances(const PointMatrix& points, int k);

/// Prim's algorithm over mutual reachability max(core_a, core_b, d(a, b)).
/// Edges come back sorted by distance (ties by endpoint indices).
std::vector<MstEdge> mutual_reachability_mst(const PointMatrix& points,
                                             const std::vector<double>& core);

std::vector<LinkageStep> single_linkage(const std::vector<MstEdge>& sorted_mst, std::size_t n);

std::vector<CondensedEdge> condense_tree(const std::vector<LinkageStep>& linkage, std::size_t n,
                                         int min_cluster_size);

/// Excess-of-mass selection; returns the selected condensed-tree cluster ids.
std::set<std::size_t> select_clusters(const std::vector<CondensedEdge>& tree, std::size_t n,
                                      const HdbscanParams& params);

ClusterAssignment hdbscan(const PointMatrix& points, const HdbscanParams& params = {});

// ---------------------------------------------------------------- t-SNE

struct TsneParams {
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
};

struct TsneResult {
  PointMatrix embedding;  // count x 2
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

/// Exact t-SNE (no space partitioning). Requires perplexity < (count-1)/3.
TsneResult tsne_2d(const PointMatrix& points, const TsneParams& params = {});

/// Symmetric joint probabilities P from per-point bandwidths found by
/// binary search on the perplexity.
Eigen::MatrixXd tsne_affinities(const PointMatrix& points, double perplexity);

/// KL(P || Q) for a 2-d layout.
double tsne_kl(const Eigen::MatrixXd& p, const PointMatrix& layout);

// ---------------------------------------------------------------- themes

struct WordCount {
  std::string word;
  std::size_t count;

  friend bool operator==(const WordCount&, const WordCount&) = default;
};

struct ThemeSummary {
  int cluster_id;
  std::vector<WordCount> top_words;  // count desc, ties alphabetical
  std::size_t num_images;
};

/// Lowercases, splits on non-alphanumerics, drops stopwords and tokens
/// shorter than 3, then counts. Clusters come back in ascending id order
/// with noise (-1) last.
std::vector<ThemeSummary> theme_words(const std::map<int, std::vector<std::string>>& captions,
                                      std::size_t top_k, const std::set<std::string>& stopwords);

std::set<std::string> load_stopwords(const std::filesystem::path& path);

}  // namespace sonoscan
