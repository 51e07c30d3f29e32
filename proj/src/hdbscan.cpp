#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>

#include "sonoscan/cluster.hpp"
#include "sonoscan/dedup.hpp"

namespace sonoscan {

namespace {

double lambda_of(double distance) {
  return distance > 0.0 ? 1.0 / distance : std::numeric_limits<double>::infinity();
}

double point_distance(const PointMatrix& points, std::size_t a, std::size_t b) {
  return (points.row(static_cast<Eigen::Index>(a)) - points.row(static_cast<Eigen::Index>(b))).norm();
}

}  // namespace

std::vector<double> core_distances(const PointMatrix& points, int k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw ConfigError("min_samples must be >= 1");
  std::vector<double> core(n, 0.0);
  if (n == 0) return core;
  const std::size_t kth = std::min<std::size_t>(static_cast<std::size_t>(k), n) - 1;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = i == j ? 0.0 : point_distance(points, i, j);
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kth), dist.end());
    core[i] = dist[kth];
  }
  return core;
}

std::vector<MstEdge> mutual_reachability_mst(const PointMatrix& points,
                                             const std::vector<double>& core) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, kInf);
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t added = 1; added < n; ++added) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double d = std::max({core[current], core[j], point_distance(points, current, j)});
      if (d < best[j]) {
        best[j] = d;
        from[j] = current;
      }
    }
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    in_tree[next] = true;
    edges.push_back({std::min(from[next], next), std::max(from[next], next), best[next]});
    current = next;
  }
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    if (x.distance != y.distance) return x.distance < y.distance;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  return edges;
}

std::vector<LinkageStep> single_linkage(const std::vector<MstEdge>& sorted_mst, std::size_t n) {
  // Union-find over 2n-1 dendrogram nodes; each merge gets a fresh node id.
  std::vector<std::size_t> parent(2 * n, 0);
  std::vector<std::size_t> size(2 * n, 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::vector<LinkageStep> steps;
  steps.reserve(sorted_mst.size());
  std::size_t next = n;
  for (const auto& e : sorted_mst) {
    const std::size_t ra = find(e.a);
    const std::size_t rb = find(e.b);
    const std::size_t merged = size[ra] + size[rb];
    steps.push_back({ra, rb, e.distance, merged});
    parent[ra] = next;
    parent[rb] = next;
    size[next] = merged;
    ++next;
  }
  return steps;
}

namespace {

// Breadth-first listing of the dendrogram below `root`.
std::vector<std::size_t> bfs_hierarchy(const std::vector<LinkageStep>& linkage, std::size_t n,
                                       std::size_t root) {
  std::vector<std::size_t> order;
  std::deque<std::size_t> queue{root};
  while (!queue.empty()) {
    const std::size_t node = queue.front();
    queue.pop_front();
    order.push_back(node);
    if (node >= n) {
      queue.push_back(linkage[node - n].left);
      queue.push_back(linkage[node - n].right);
    }
  }
  return order;
}

}  // namespace

std::vector<CondensedEdge> condense_tree(const std::vector<LinkageStep>& linkage, std::size_t n,
                                         int min_cluster_size) {
  std::vector<CondensedEdge> tree;
  if (n == 0) return tree;
  if (n == 1) {
    tree.push_back({1, 0, std::numeric_limits<double>::infinity(), 1});
    return tree;
  }
  const auto mcs = static_cast<std::size_t>(min_cluster_size);
  const std::size_t root = 2 * n - 2;
  auto node_size = [&](std::size_t node) { return node < n ? std::size_t{1} : linkage[node - n].size; };

  std::vector<std::size_t> relabel(2 * n - 1, 0);
  std::vector<bool> ignore(2 * n - 1, false);
  relabel[root] = n;
  std::size_t next_label = n + 1;

  auto drop_points = [&](std::size_t subtree, std::size_t parent_label, double lambda) {
    for (std::size_t sub : bfs_hierarchy(linkage, n, subtree)) {
      if (sub < n) tree.push_back({parent_label, sub, lambda, 1});
      ignore[sub] = true;
    }
  };

  for (std::size_t node : bfs_hierarchy(linkage, n, root)) {
    if (ignore[node] || node < n) continue;
    const auto& step = linkage[node - n];
    const double lambda = lambda_of(step.distance);
    const std::size_t left_size = node_size(step.left);
    const std::size_t right_size = node_size(step.right);
    const std::size_t label = relabel[node];

    if (left_size >= mcs && right_size >= mcs) {
      relabel[step.left] = next_label++;
      tree.push_back({label, relabel[step.left], lambda, left_size});
      relabel[step.right] = next_label++;
      tree.push_back({label, relabel[step.right], lambda, right_size});
    } else if (left_size < mcs && right_size < mcs) {
      drop_points(step.left, label, lambda);
      drop_points(step.right, label, lambda);
    } else if (left_size < mcs) {
      relabel[step.right] = label;
      drop_points(step.left, label, lambda);
    } else {
      relabel[step.left] = label;
      drop_points(step.right, label, lambda);
    }
  }
  return tree;
}

namespace {

struct ClusterTreeIndex {
  std::size_t n;
  std::size_t root;
  std::size_t max_label;
  std::map<std::size_t, std::vector<std::size_t>> children;  // cluster -> child clusters
  std::map<std::size_t, std::size_t> parent_of;              // cluster -> parent cluster
  std::map<std::size_t, double> birth;                       // cluster -> lambda at creation

  ClusterTreeIndex(const std::vector<CondensedEdge>& tree, std::size_t n_points)
      : n(n_points), root(n_points), max_label(n_points) {
    birth[root] = 0.0;
    for (const auto& e : tree) {
      max_label = std::max(max_label, e.parent);
      if (e.child >= n) {
        children[e.parent].push_back(e.child);
        parent_of[e.child] = e.parent;
        birth[e.child] = e.lambda;
        max_label = std::max(max_label, e.child);
      }
    }
  }

  std::vector<std::size_t> descendants(std::size_t cluster) const {
    std::vector<std::size_t> out;
    std::deque<std::size_t> queue{cluster};
    while (!queue.empty()) {
      const auto c = queue.front();
      queue.pop_front();
      if (c != cluster) out.push_back(c);
      if (auto it = children.find(c); it != children.end()) {
        for (auto child : it->second) queue.push_back(child);
      }
    }
    return out;
  }
};

// Climbs from `leaf` until reaching a cluster born at a distance above epsilon.
std::size_t traverse_upwards(const ClusterTreeIndex& index, double epsilon, std::size_t leaf,
                             bool allow_single_cluster) {
  const std::size_t parent = index.parent_of.at(leaf);
  if (parent == index.root) return allow_single_cluster ? parent : leaf;
  const double parent_eps = 1.0 / index.birth.at(parent);
  if (parent_eps > epsilon) return parent;
  return traverse_upwards(index, epsilon, parent, allow_single_cluster);
}

}  // namespace

std::set<std::size_t> select_clusters(const std::vector<CondensedEdge>& tree, std::size_t n,
                                      const HdbscanParams& params) {
  const ClusterTreeIndex index(tree, n);

  std::map<std::size_t, double> stability;
  for (std::size_t c = n; c <= index.max_label; ++c) stability[c] = 0.0;
  for (const auto& e : tree) {
    const double birth = index.birth.at(e.parent);
    const double lambda = std::isinf(e.lambda) ? std::numeric_limits<double>::max() : e.lambda;
    stability[e.parent] += (lambda - birth) * static_cast<double>(e.child_size);
  }

  std::vector<std::size_t> nodes;
  for (auto it = stability.rbegin(); it != stability.rend(); ++it) nodes.push_back(it->first);
  if (!params.allow_single_cluster && !nodes.empty()) nodes.pop_back();  // drop the root

  std::map<std::size_t, bool> is_cluster;
  for (auto c : nodes) is_cluster[c] = true;
  for (auto node : nodes) {
    double subtree = 0.0;
    if (auto it = index.children.find(node); it != index.children.end()) {
      for (auto child : it->second) subtree += stability[child];
    }
    if (subtree > stability[node]) {
      is_cluster[node] = false;
      stability[node] = subtree;
    } else {
      for (auto sub : index.descendants(node)) is_cluster[sub] = false;
    }
  }

  std::set<std::size_t> selected;
  for (const auto& [c, chosen] : is_cluster) {
    if (chosen) selected.insert(c);
  }

  if (params.cluster_selection_epsilon > 0.0 && !index.children.empty()) {
    std::set<std::size_t> refined;
    std::set<std::size_t> processed;
    for (auto leaf : selected) {
      const double birth = index.birth.at(leaf);
      const double eps = birth > 0.0 ? 1.0 / birth : std::numeric_limits<double>::infinity();
      if (eps < params.cluster_selection_epsilon) {
        if (processed.contains(leaf)) continue;
        const auto chosen = traverse_upwards(index, params.cluster_selection_epsilon, leaf,
                                             params.allow_single_cluster);
        refined.insert(chosen);
        for (auto sub : index.descendants(chosen)) processed.insert(sub);
      } else {
        refined.insert(leaf);
      }
    }
    // A cluster swallowed by a selected ancestor is not a cluster of its own.
    for (auto c : processed) refined.erase(c);
    selected = std::move(refined);
  }
  return selected;
}

ClusterAssignment hdbscan(const PointMatrix& points, const HdbscanParams& params) {
  if (params.min_cluster_size < 2) throw ConfigError("min_cluster_size must be >= 2");
  if (params.min_samples < 0) throw ConfigError("min_samples must be >= 0");
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw DataError("hdbscan needs at least one point");

  ClusterAssignment result;
  result.min_cluster_size = params.min_cluster_size;
  result.labels.assign(n, -1);
  if (n < static_cast<std::size_t>(params.min_cluster_size)) return result;

  const int k = params.min_samples > 0 ? params.min_samples : params.min_cluster_size;
  const auto core = core_distances(points, k);
  const auto mst = mutual_reachability_mst(points, core);
  const auto linkage = single_linkage(mst, n);
  const auto tree = condense_tree(linkage, n, params.min_cluster_size);
  const auto selected = select_clusters(tree, n, params);
  const std::size_t root = n;

  // Points join the nearest selected ancestor of the cluster they fell out of.
  UnionFind sets(2 * n + 1);
  for (const auto& e : tree) {
    if (!selected.contains(e.child)) sets.unite(e.parent, e.child);
  }
  std::vector<double> point_lambda(n, 0.0);
  double root_max_lambda = 0.0;
  for (const auto& e : tree) {
    if (e.child < n) point_lambda[e.child] = e.lambda;
    if (e.parent == root) root_max_lambda = std::max(root_max_lambda, e.lambda);
  }

  // UnionFind roots are arbitrary members; map each set to its cluster label.
  std::map<std::size_t, std::size_t> set_cluster;
  for (auto c : selected) set_cluster[sets.find(c)] = c;
  if (!selected.contains(root)) set_cluster.emplace(sets.find(root), root);

  std::map<std::size_t, int> relabel;
  for (std::size_t p = 0; p < n; ++p) {
    auto it = set_cluster.find(sets.find(p));
    if (it == set_cluster.end()) continue;
    const std::size_t cluster = it->second;
    if (cluster == root) {
      if (!(selected.size() == 1 && params.allow_single_cluster && selected.contains(root))) continue;
      const double threshold = params.cluster_selection_epsilon > 0.0
                                   ? 1.0 / params.cluster_selection_epsilon
                                   : root_max_lambda;
      if (point_lambda[p] < threshold) continue;
    }
    auto [pos, inserted] = relabel.emplace(cluster, static_cast<int>(relabel.size()));
    result.labels[p] = pos->second;
  }
  result.n_clusters = static_cast<int>(relabel.size());
  return result;
}

}  // namespace sonoscan
