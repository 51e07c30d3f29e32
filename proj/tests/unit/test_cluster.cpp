#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "sonoscan/cluster.hpp"
#include "sonoscan/dedup.hpp"
#include "support.hpp"

using namespace sonoscan;

namespace {

PointMatrix blob(Rng& rng, std::size_t n, std::vector<double> center, double sigma) {
  PointMatrix p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(center.size()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = center[static_cast<std::size_t>(k)] + sigma * rng.normal();
  }
  return p;
}

PointMatrix stack(const PointMatrix& a, const PointMatrix& b) {
  PointMatrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

// Relabels clusters by order of first appearance so partitions compare.
std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto it = remap.try_emplace(l, static_cast<int>(remap.size())).first;
    out.push_back(it->second);
  }
  return out;
}

double oracle_mst_weight(const PointMatrix& p, const std::vector<double>& core) {
  const auto n = static_cast<std::size_t>(p.rows());
  std::vector<std::tuple<double, std::size_t, std::size_t>> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = (p.row(static_cast<Eigen::Index>(a)) - p.row(static_cast<Eigen::Index>(b))).norm();
      edges.push_back({std::max({core[a], core[b], d}), a, b});
    }
  }
  std::sort(edges.begin(), edges.end());
  UnionFind uf(n);
  double total = 0.0;
  for (const auto& [w, a, b] : edges) {
    if (uf.unite(a, b)) total += w;
  }
  return total;
}

}  // namespace

TEST_CASE("pca") {
  Rng rng(1);
  SUBCASE("data in a 2-d subspace reconstructs exactly") {
    PointMatrix basis(2, 6);
    for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
    PointMatrix coeffs(40, 2);
    for (Eigen::Index i = 0; i < coeffs.size(); ++i) coeffs.data()[i] = rng.normal();
    const PointMatrix x = coeffs * basis;
    const auto r = pca_reduce(x, 2);
    const PointMatrix back = (r.projected * r.components).rowwise() + r.mean;
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("isotropic data has near-equal variances") {
    const auto x = blob(rng, 4000, std::vector<double>(5, 0.0), 1.0);
    const auto r = pca_reduce(x, 4);
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(r.explained_variance[k] == doctest::Approx(1.0).epsilon(0.1));
  }
  SUBCASE("dominant axis is found") {
    PointMatrix x(500, 2);
    for (Eigen::Index i = 0; i < 500; ++i) {
      x(i, 0) = std::sqrt(10.0) * rng.normal();
      x(i, 1) = std::sqrt(0.1) * rng.normal();
    }
    const auto r = pca_reduce(x, 1);
    const double angle = std::acos(std::min(1.0, std::abs(r.components(0, 0))));
    CHECK(angle < 1e-3 * 30);  // sampling noise on 500 points
    CHECK(r.components(0, 0) > 0);
    // Exact version of the same check: covariance diag(10, 0.1) built by hand.
    PointMatrix exact(4, 2);
    exact << std::sqrt(20.0), 0, -std::sqrt(20.0), 0, 0, std::sqrt(0.2), 0, -std::sqrt(0.2);
    const auto e = pca_reduce(exact, 1);
    CHECK(std::acos(std::abs(e.components(0, 0))) < 1e-3);
  }
  SUBCASE("full dimension keeps pairwise distances") {
    const auto x = blob(rng, 30, std::vector<double>(4, 1.0), 2.0);
    const auto r = pca_reduce(x, 4);
    for (Eigen::Index a = 0; a < 30; ++a) {
      for (Eigen::Index b = a + 1; b < 30; ++b) {
        CHECK((r.projected.row(a) - r.projected.row(b)).norm() ==
              doctest::Approx((x.row(a) - x.row(b)).norm()).epsilon(1e-9));
      }
    }
  }
  SUBCASE("bad target dimensions") {
    const auto x = blob(rng, 5, std::vector<double>(3, 0.0), 1.0);
    CHECK_THROWS_AS(pca_reduce(x, 0), ConfigError);
    CHECK_THROWS_AS(pca_reduce(x, 4), DataError);
    CHECK_THROWS_AS(pca_reduce(blob(rng, 3, std::vector<double>(8, 0.0), 1.0), 3), DataError);
  }
}

TEST_CASE("hdbscan") {
  Rng rng(2);
  HdbscanParams p;
  p.min_cluster_size = 10;
  SUBCASE("fewer points than min_cluster_size are noise") {
    const auto r = hdbscan(blob(rng, 9, {0, 0}, 1.0), p);
    CHECK(r.n_clusters == 0);
    CHECK(std::all_of(r.labels.begin(), r.labels.end(), [](int l) { return l == -1; }));
  }
  SUBCASE("two separated blobs") {
    const auto x = stack(blob(rng, 50, {0, 0}, 0.1), blob(rng, 50, {20, 0}, 0.1));
    const auto r = hdbscan(x, p);
    CHECK(r.n_clusters == 2);
    CHECK(std::count(r.labels.begin(), r.labels.end(), -1) == 0);
    for (int i = 1; i < 50; ++i) CHECK(r.labels[static_cast<std::size_t>(i)] == r.labels[0]);
    for (int i = 51; i < 100; ++i) CHECK(r.labels[static_cast<std::size_t>(i)] == r.labels[50]);
    CHECK(r.labels[0] != r.labels[50]);
  }
  SUBCASE("one blob plus far outliers") {
    PointMatrix outliers(3, 2);
    outliers << 50, 50, -50, 40, 60, -45;
    const auto x = stack(blob(rng, 50, {0, 0}, 0.5), outliers);
    HdbscanParams single = p;
    single.allow_single_cluster = true;
    // A lone root cluster keeps the points that join it below this distance.
    single.cluster_selection_epsilon = 5.0;
    const auto r = hdbscan(x, single);
    CHECK(r.n_clusters == 1);
    CHECK(r.labels[50] == -1);
    CHECK(r.labels[51] == -1);
    CHECK(r.labels[52] == -1);
    CHECK(std::count(r.labels.begin(), r.labels.end(), -1) == 3);
  }
  SUBCASE("mst matches a kruskal oracle") {
    const auto x = blob(rng, 40, {0, 0, 0}, 1.0);
    const auto core = core_distances(x, 5);
    const auto mst = mutual_reachability_mst(x, core);
    REQUIRE(mst.size() == 39);
    double total = 0;
    for (const auto& e : mst) total += e.distance;
    CHECK(total == doctest::Approx(oracle_mst_weight(x, core)).epsilon(1e-12));
    for (std::size_t k = 1; k < mst.size(); ++k) CHECK(mst[k - 1].distance <= mst[k].distance);
  }
  SUBCASE("core distance counts the point itself") {
    PointMatrix x(3, 1);
    x << 0, 1, 3;
    const auto core = core_distances(x, 1);
    CHECK(core == std::vector<double>{0, 0, 0});
    CHECK(core_distances(x, 2) == std::vector<double>{1, 1, 2});
  }
  SUBCASE("labels are contiguous and clusters respect min size") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r2(seed);
      const auto x = stack(stack(blob(r2, 30, {0, 0}, 1.0), blob(r2, 25, {6, 0}, 1.0)),
                           blob(r2, 20, {0, 7}, 2.0));
      const auto r = hdbscan(x, p);
      std::map<int, int> sizes;
      for (int l : r.labels) sizes[l]++;
      for (const auto& [label, size] : sizes) {
        if (label >= 0) {
          CHECK(size >= 10);
          CHECK(label < r.n_clusters);
        }
      }
      CHECK(static_cast<int>(sizes.size() - sizes.count(-1)) == r.n_clusters);
    }
  }
  SUBCASE("partition is invariant under permutation") {
    const auto x = stack(blob(rng, 30, {0, 0}, 1.0), blob(rng, 30, {8, 8}, 1.0));
    const auto base = hdbscan(x, p);
    std::vector<Eigen::Index> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    PointMatrix y(60, 2);
    for (Eigen::Index i = 0; i < 60; ++i) y.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    const auto shuffled = hdbscan(y, p);
    std::vector<int> back(60);
    for (std::size_t i = 0; i < 60; ++i) back[static_cast<std::size_t>(perm[i])] = shuffled.labels[i];
    CHECK(canonical(back) == canonical(base.labels));
  }
  SUBCASE("invalid parameters") {
    HdbscanParams bad;
    bad.min_cluster_size = 1;
    CHECK_THROWS_AS(hdbscan(blob(rng, 5, {0}, 1.0), bad), ConfigError);
  }
}

TEST_CASE("t-SNE") {
  Rng rng(3);
  const auto x = stack(blob(rng, 30, std::vector<double>(10, 0.0), 1.0), blob(rng, 30, std::vector<double>(10, 15.0), 1.0));
  TsneParams p;
  p.perplexity = 10;
  p.iterations = 500;
  p.seed = 4;
  const auto r = tsne_2d(x, p);
  REQUIRE(r.embedding.rows() == 60);
  REQUIRE(r.embedding.cols() == 2);
  CHECK(r.embedding.allFinite());
  CHECK(r.final_kl < r.initial_kl);

  const auto again = tsne_2d(x, p);
  CHECK(again.embedding == r.embedding);

  const Eigen::RowVector2d ca = r.embedding.topRows(30).colwise().mean();
  const Eigen::RowVector2d cb = r.embedding.bottomRows(30).colwise().mean();
  double spread = 0;
  for (Eigen::Index i = 0; i < 60; ++i) spread += (r.embedding.row(i) - (i < 30 ? ca : cb)).norm();
  spread /= 60;
  CHECK((ca - cb).norm() > 3 * spread);

  SUBCASE("affinities are a symmetric distribution") {
    const auto P = tsne_affinities(x, 10);
    CHECK(P.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("perplexity limits") {
    TsneParams big = p;
    big.perplexity = 20;  // (60-1)/3 = 19.67
    CHECK_THROWS_AS(tsne_2d(x, big), DataError);
    big.perplexity = 0;
    CHECK_THROWS_AS(tsne_2d(x, big), ConfigError);
  }
}

TEST_CASE("theme words") {
  SUBCASE("top five in count order") {
    std::vector<std::string> caps;
    auto add = [&](const std::string& w, int n) {
      for (int i = 0; i < n; ++i) caps.push_back(w);
    };
    add("ultrasound", 9);
    add("doppler", 7);
    add("color", 5);
    add("scanner", 4);
    add("machine", 3);
    add("the", 20);
    add("probe", 2);
    const auto themes = theme_words({{0, caps}}, 5, {"the"});
    REQUIRE(themes.size() == 1);
    std::vector<std::string> words;
    for (const auto& w : themes[0].top_words) words.push_back(w.word);
    CHECK(words == std::vector<std::string>{"ultrasound", "doppler", "color", "scanner", "machine"});
    CHECK(themes[0].top_words[0].count == 9);
    CHECK(themes[0].num_images == caps.size());
  }
  SUBCASE("all stopwords") {
    const auto themes = theme_words({{0, {"the and", "of the"}}}, 5, {"the", "and", "of"});
    CHECK(themes[0].top_words.empty());
  }
  SUBCASE("ties are alphabetical") {
    const auto themes = theme_words({{1, {"baby abby"}}}, 1, {});
    REQUIRE(themes[0].top_words.size() == 1);
    CHECK(themes[0].top_words[0].word == "abby");
  }
  SUBCASE("noise last, tokens lowercased, short tokens dropped") {
    const auto themes = theme_words({{-1, {"Noise"}}, {2, {"Baby BABY ok"}}, {0, {"x"}}}, 3, {});
    REQUIRE(themes.size() == 3);
    CHECK(themes[0].cluster_id == 0);
    CHECK(themes[1].cluster_id == 2);
    CHECK(themes[2].cluster_id == -1);
    CHECK(themes[1].top_words == std::vector<WordCount>{{"baby", 2}});
  }
  SUBCASE("shipped stopword list") {
    const auto stop = load_stopwords(std::string(SONOSCAN_DATA_DIR) + "/stopwords_en.txt");
    CHECK(stop.contains("the"));
  }
}
