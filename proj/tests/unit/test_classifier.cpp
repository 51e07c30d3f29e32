#include <doctest.h>

#include <algorithm>
#include <set>

#include "sonoscan/classifier.hpp"
#include "support.hpp"

using namespace sonoscan;

namespace {

LabeledSet blobs(std::uint64_t seed, std::size_t per_class, double gap = 10.0) {
  Rng rng(seed);
  auto set = testing::gaussian_classes(rng, per_class, 512, gap);
  set.X = normalize(std::move(set.X));
  return set;
}

double accuracy(const Model& model, const LabeledSet& set) {
  return evaluate(predict(model, set.X).labels, set.y).accuracy;
}

LabeledSet tiny_set(std::vector<float> xs, std::vector<int> ys, std::uint32_t dim) {
  LabeledSet s;
  s.X = EmbeddingMatrix(ys.size(), dim, std::move(xs));
  s.y = std::move(ys);
  return s;
}

DecisionTree leaf(std::uint32_t c0, std::uint32_t c1) {
  DecisionTree t;
  TreeNode n;
  n.count0 = c0;
  n.count1 = c1;
  t.nodes.push_back(n);
  return t;
}

}  // namespace

TEST_CASE("evaluate") {
  const std::vector<int> truth{1, 1, 0, 0};
  const auto perfect = evaluate(truth, truth);
  CHECK(perfect.accuracy == 100.0);
  CHECK(perfect.fp_rate == 0.0);
  CHECK(perfect.fn_rate == 0.0);

  const std::vector<int> pred{1, 0, 0, 1};
  const auto r = evaluate(pred, truth);
  CHECK(r.accuracy == 50.0);
  CHECK(r.fp_rate == 50.0);
  CHECK(r.fn_rate == 50.0);
  CHECK(r.accuracy == 100.0 - 100.0 * static_cast<double>(r.fp + r.fn) / 4.0);

  CHECK_THROWS_AS(evaluate(std::vector<int>{1}, truth), DataError);
  CHECK_THROWS_AS(evaluate(std::vector<int>{1, 1}, std::vector<int>{1, 1}), DataError);
}

TEST_CASE("predict conventions") {
  EmbeddingMatrix x(3, 2, {1, 0, 0, 1, -1, -1});
  SUBCASE("svm w=0 b=1 labels everything 1 with score 1") {
    LinearSvmModel m;
    m.w = {0.0f, 0.0f};
    m.b = 1.0f;
    const auto p = predict(Model{m}, x);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(p.scores[i] == 1.0);
      CHECK(p.labels[i] == 1);
    }
  }
  SUBCASE("zero mlp scores 0 and labels 1") {
    MlpModel net({2, 3, 1}, 1);
    for (auto& layer : net.layers()) {
      layer.weight.setZero();
      layer.bias.setZero();
    }
    const auto p = predict(Model{net}, x);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(p.scores[i] == 0.0);
      CHECK(p.labels[i] == 1);
    }
  }
  SUBCASE("three stumps voting 2:1") {
    RandomForestModel rf;
    rf.dim = 2;
    rf.trees = {leaf(0, 3), leaf(1, 4), leaf(5, 1)};
    const auto p = predict(Model{rf}, x);
    CHECK(rf.vote_fraction(x.row(0)) == doctest::Approx(2.0 / 3.0));
    CHECK(p.scores[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(p.labels[0] == 1);
  }
  SUBCASE("even leaf split predicts 1") {
    CHECK(leaf(2, 2).predict(x.row(0)) == 1);
  }
}

TEST_CASE("label is 1 exactly when score is non-negative") {
  const auto train = blobs(1, 60, 2.0);
  const auto probe = blobs(2, 40, 2.0);
  SvmTrainConfig sc;
  sc.lambda_grid = {1e-3};
  ForestParams fp;
  fp.n_trees = 5;
  fp.max_depth = 4;
  MlpTrainConfig mc;
  mc.hidden = {8};
  mc.epochs = 3;
  const std::vector<Model> models{Model{train_svm(train, train, sc)}, Model{fit_forest(train, fp, 3)},
                                  Model{train_mlp(train, train, mc)}};
  for (const auto& m : models) {
    const auto p = predict(m, probe.X);
    for (std::size_t i = 0; i < probe.size(); ++i) CHECK(p.labels[i] == (p.scores[i] >= 0.0 ? 1 : 0));
  }
}

TEST_CASE("svm") {
  SUBCASE("separated blobs") {
    const auto train = blobs(10, 200);
    const auto val = blobs(11, 200);
    const auto model = train_svm(train, val, {});
    CHECK(accuracy(Model{model}, val) >= 99.0);
  }
  SUBCASE("one class only is an error") {
    auto train = blobs(12, 10);
    std::fill(train.y.begin(), train.y.end(), 1);
    CHECK_THROWS_AS(train_svm(train, blobs(13, 10), {}), DataError);
  }
  SUBCASE("duplicating the training set keeps decision signs") {
    const auto train = blobs(14, 100, 6.0);
    auto doubled = train;
    doubled.append(train);
    const auto probe = blobs(15, 100, 6.0);
    // Same objective; enough epochs for both runs to settle near its optimum.
    const auto a = predict(Model{fit_svm(train, 1e-3, 200, 1)}, probe.X);
    const auto b = predict(Model{fit_svm(doubled, 1e-3, 200, 1)}, probe.X);
    CHECK(a.labels == b.labels);
  }
  SUBCASE("deterministic per seed") {
    const auto train = blobs(16, 50, 3.0);
    CHECK(fit_svm(train, 1e-3, 5, 9).w == fit_svm(train, 1e-3, 5, 9).w);
  }
  SUBCASE("lambda tie goes to the smaller value") {
    // Wide gap so both values score 100% on validation.
    const auto train = blobs(17, 100, 30.0);
    SvmTrainConfig c;
    c.lambda_grid = {1e-2, 1e-3};
    const auto m = train_svm(train, blobs(18, 100, 30.0), c);
    CHECK(m.lambda == doctest::Approx(1e-3));
  }
}

TEST_CASE("random forest") {
  SUBCASE("forced stump on 1-d data") {
    const auto train = tiny_set({0.0f, 1.0f}, {0, 1}, 1);
    ForestParams p;
    p.n_trees = 1;
    p.max_depth = 1;
    p.bootstrap = false;
    const auto rf = fit_forest(train, p, 0);
    REQUIRE(rf.trees.size() == 1);
    const auto& root = rf.trees[0].nodes[0];
    CHECK_FALSE(root.leaf);
    CHECK(root.threshold == doctest::Approx(0.5));
    const auto pred = predict(Model{rf}, train.X);
    CHECK(pred.labels == train.y);
  }
  SUBCASE("identical features become a majority leaf") {
    const auto train = tiny_set({0.3f, 0.3f, 0.3f}, {1, 0, 0}, 1);
    ForestParams p;
    p.n_trees = 1;
    p.bootstrap = false;
    const auto rf = fit_forest(train, p, 0);
    REQUIRE(rf.trees[0].nodes.size() == 1);
    CHECK(rf.trees[0].predict(train.X.row(0)) == 0);
  }
  SUBCASE("separated blobs") {
    const auto train = blobs(20, 200);
    const auto test = blobs(21, 200);
    RfTrainConfig c;
    c.n_trees_grid = {50};
    c.max_depth_grid = {8};
    const auto rf = train_rf(train, blobs(22, 100), c);
    CHECK(accuracy(Model{rf}, test) >= 95.0);
    for (const auto& t : rf.trees) CHECK(t.depth() <= 8);
  }
  SUBCASE("deterministic per seed") {
    const auto train = blobs(23, 40, 3.0);
    ForestParams p;
    p.n_trees = 4;
    const auto a = fit_forest(train, p, 5);
    const auto b = fit_forest(train, p, 5);
    REQUIRE(a.trees.size() == b.trees.size());
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
      REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
      for (std::size_t k = 0; k < a.trees[t].nodes.size(); ++k) {
        CHECK(a.trees[t].nodes[k].feature == b.trees[t].nodes[k].feature);
        CHECK(a.trees[t].nodes[k].threshold == b.trees[t].nodes[k].threshold);
      }
    }
  }
}

TEST_CASE("model files round trip") {
  testing::TempDir dir;
  const auto train = blobs(30, 40, 4.0);
  SvmTrainConfig sc;
  sc.lambda_grid = {1e-3};
  ForestParams fp;
  fp.n_trees = 3;
  MlpTrainConfig mc;
  mc.hidden = {6, 3};
  mc.epochs = 2;
  const std::vector<Model> models{Model{train_svm(train, train, sc)}, Model{fit_forest(train, fp, 1)},
                                  Model{train_mlp(train, train, mc)}};
  for (const auto& m : models) {
    const auto path = dir / ("m" + to_string(model_kind(m)) + ".bin");
    save_model(path, m, 77);
    const auto loaded = load_model(path);
    CHECK(loaded.seed == 77);
    CHECK(model_kind(loaded.model) == model_kind(m));
    CHECK(predict(loaded.model, train.X).scores == predict(m, train.X).scores);
  }
  testing::write_text(dir / "junk.bin", "SONX garbage");
  CHECK_THROWS_AS(load_model(dir / "junk.bin"), DataError);
}

TEST_CASE("leakage filter") {
  Rng rng(40);
  SUBCASE("exact copy of a holdout row is removed") {
    LabeledSet pool;
    pool.X = normalize(testing::random_matrix(rng, 5, 8));
    pool.y = {1, 0, 1, 0, 1};
    EmbeddingMatrix holdout(1, 8);
    std::copy(pool.X.row(3).begin(), pool.X.row(3).end(), holdout.row(0).begin());
    const auto r = leakage_filter(pool, holdout);
    CHECK(r.removed_rows == std::vector<std::size_t>{3});
    CHECK(r.kept.size() == 4);
    CHECK(leakage_filter(pool, holdout, 1.0 + 1e-6).removed_rows.empty());
  }
  SUBCASE("random pool against a pairwise oracle") {
    LabeledSet pool;
    pool.X = normalize(testing::random_matrix(rng, 100, 4));
    pool.y.assign(100, 0);
    const auto holdout = normalize(testing::random_matrix(rng, 20, 4));
    const auto r = leakage_filter(pool, holdout, 0.8);
    std::vector<std::size_t> oracle;
    for (std::size_t i = 0; i < 100; ++i) {
      for (std::size_t h = 0; h < 20; ++h) {
        if (testing::naive_dot(pool.X.row(i), holdout.row(h)) > 0.8) {
          oracle.push_back(i);
          break;
        }
      }
    }
    CHECK(r.removed_rows == oracle);
    for (std::size_t i = 0; i < r.kept.size(); ++i) {
      for (std::size_t h = 0; h < 20; ++h) CHECK(testing::naive_dot(r.kept.X.row(i), holdout.row(h)) <= 0.8);
    }
  }
}

TEST_CASE("hard example mining") {
  LinearSvmModel m;
  m.w = {1.0f};
  m.b = 0.0f;
  SUBCASE("perfect model") {
    const auto val = tiny_set({1.0f, -1.0f}, {1, 0}, 1);
    CHECK(mine_hard_examples(Model{m}, val).empty());
  }
  SUBCASE("least confident first") {
    const auto val = tiny_set({-0.9f, -0.1f, 2.0f}, {1, 1, 1}, 1);
    const auto hard = mine_hard_examples(Model{m}, val);
    REQUIRE(hard.size() == 2);
    CHECK(hard[0].score == doctest::Approx(-0.1));
    CHECK(hard[1].score == doctest::Approx(-0.9));
  }
  SUBCASE("random model against predict-then-compare") {
    Rng rng(41);
    LabeledSet val;
    val.X = testing::random_matrix(rng, 50, 3);
    for (std::size_t i = 0; i < 50; ++i) val.y.push_back(static_cast<int>(rng.below(2)));
    LinearSvmModel r;
    r.w = {0.3f, -1.0f, 0.7f};
    r.b = 0.1f;
    const auto p = predict(Model{r}, val.X);
    std::set<std::size_t> oracle, got;
    for (std::size_t i = 0; i < 50; ++i) {
      if (p.labels[i] != val.y[i]) oracle.insert(i);
    }
    for (const auto& h : mine_hard_examples(Model{r}, val)) got.insert(h.row);
    CHECK(got == oracle);
  }
}

TEST_CASE("expand from seeds") {
  Rng rng(42);
  const auto pool = normalize(testing::random_matrix(rng, 30, 6));
  EmbeddingMatrix seed(1, 6);
  std::copy(pool.row(12).begin(), pool.row(12).end(), seed.row(0).begin());
  CHECK(expand_from_seeds(pool, seed, 0).empty());
  CHECK(expand_from_seeds(pool, seed, 1) == std::vector<std::size_t>{12});
  const auto seeds = normalize(testing::random_matrix(rng, 3, 6));
  const auto got = expand_from_seeds(pool, seeds, 5, {0, 1});
  std::vector<std::pair<double, std::size_t>> oracle;
  for (std::size_t r = 2; r < 30; ++r) {
    double best = -2;
    for (std::size_t s = 0; s < 3; ++s) best = std::max(best, testing::naive_dot(pool.row(r), seeds.row(s)));
    oracle.push_back({-best, r});
  }
  std::sort(oracle.begin(), oracle.end());
  REQUIRE(got.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(got[k] == oracle[k].second);
}

TEST_CASE("boundary band") {
  SUBCASE("degenerate sigma") {
    const std::vector<double> s{-0.5, -0.5, 1.0};
    const auto band = boundary_band(s, 2.0);
    CHECK(band.sigma == 0.0);
    CHECK(band.items.empty());
  }
  SUBCASE("hand arithmetic") {
    const std::vector<double> s{-1.0, -2.0, -3.0};
    const auto band = boundary_band(s, 1.0);
    CHECK(band.sigma == doctest::Approx(0.8164965809).epsilon(1e-9));
    CHECK(band.items.empty());
  }
  SUBCASE("direct filter oracle") {
    Rng rng(43);
    std::vector<double> s(200);
    for (auto& x : s) x = rng.normal();
    const auto band = boundary_band(s, 2.0);
    std::vector<double> neg;
    for (double x : s) {
      if (x < 0) neg.push_back(x);
    }
    double mean = 0;
    for (double x : neg) mean += x;
    mean /= static_cast<double>(neg.size());
    double var = 0;
    for (double x : neg) var += (x - mean) * (x - mean);
    const double sigma = std::sqrt(var / static_cast<double>(neg.size()));
    std::set<std::size_t> oracle, got;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 0 && s[i] >= -2.0 * sigma) oracle.insert(i);
    }
    for (const auto& item : band.items) got.insert(item.row);
    CHECK(band.sigma == doctest::Approx(sigma).epsilon(1e-12));
    CHECK(got == oracle);
  }
  SUBCASE("no negatives") {
    const std::vector<double> s{0.1, 0.0};
    CHECK_THROWS_AS(boundary_band(s, 2.0), DataError);
  }
}

TEST_CASE("active learning stops and never trains on leaked items") {
  Rng rng(44);
  auto train = testing::gaussian_classes(rng, 20, 16, 3.0);
  auto val = testing::gaussian_classes(rng, 50, 16, 3.0);
  auto pool = testing::gaussian_classes(rng, 100, 16, 3.0);
  train.X = normalize(train.X);
  val.X = normalize(val.X);
  pool.X = normalize(pool.X);
  ActiveLearningConfig c;
  c.max_rounds = 3;
  c.expand_k = 10;
  c.svm.lambda_grid = {1e-3};
  const auto r = run_active_learning(train, val, pool, val.X, c);
  CHECK(!r.rounds.empty());
  CHECK(r.rounds.size() <= 3);
  for (std::size_t i = 0; i < r.train.size(); ++i) {
    for (std::size_t h = 0; h < val.size(); ++h) CHECK(testing::naive_dot(r.train.X.row(i), val.X.row(h)) <= 0.95);
  }
}
