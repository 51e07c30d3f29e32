#include <doctest.h>

#include <set>

#include "sonoscan/retrieval.hpp"
#include "support.hpp"

using namespace sonoscan;

namespace {

std::vector<ImageRecord> records_for(std::size_t n) {
  std::vector<ImageRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].id = "img" + std::to_string(i);
    records[i].row = i;
  }
  return records;
}

QuerySet query_set(EmbeddingMatrix m) {
  QuerySet q;
  q.embeddings = std::move(m);
  for (std::size_t i = 0; i < q.embeddings.count; ++i) q.labels.push_back("q" + std::to_string(i));
  return q;
}

std::set<std::size_t> rows_of(const std::vector<Detection>& ds) {
  std::set<std::size_t> out;
  for (const auto& d : ds) out.insert(d.row);
  return out;
}

// Unit 2-d vector at cosine `c` from the x axis.
std::vector<float> at_cosine(double c) {
  return {static_cast<float>(c), static_cast<float>(std::sqrt(1.0 - c * c))};
}

}  // namespace

TEST_CASE("identical query finds its image with score 1") {
  Rng rng(2);
  const auto images = normalize(testing::random_matrix(rng, 20, 16));
  EmbeddingMatrix q(1, 16);
  std::copy(images.row(7).begin(), images.row(7).end(), q.row(0).begin());
  const auto ds = retrieve(records_for(20), images, query_set(q), {0.99, QueryKind::image});
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].image_id == "img7");
  CHECK(ds[0].score == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(ds[0].best_query == std::optional<std::string>("q0"));
}

TEST_CASE("tau outside [0,1] is rejected") {
  RetrievalConfig c{1.0 + 1e-9, QueryKind::image};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.tau = -0.01;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(RetrievalConfig::defaults_for(QueryKind::image).tau == 0.7);
  CHECK(RetrievalConfig::defaults_for(QueryKind::text).tau == 0.3);
}

TEST_CASE("retrieve matches a max-over-queries oracle") {
  Rng rng(3);
  const auto images = normalize(testing::random_matrix(rng, 50, 8));
  const auto queries = normalize(testing::random_matrix(rng, 3, 8));
  const auto ds = retrieve(records_for(50), images, query_set(queries), {0.2, QueryKind::text});
  std::set<std::size_t> oracle;
  for (std::size_t r = 0; r < 50; ++r) {
    double best = -2.0;
    for (std::size_t q = 0; q < 3; ++q) best = std::max(best, testing::naive_dot(images.row(r), queries.row(q)));
    if (best >= 0.2) oracle.insert(r);
  }
  CHECK(rows_of(ds) == oracle);
  for (std::size_t k = 1; k < ds.size(); ++k) CHECK(ds[k - 1].score >= ds[k].score);
}

TEST_CASE("raising tau never adds a detection") {
  Rng rng(4);
  const auto images = normalize(testing::random_matrix(rng, 300, 8));
  const auto queries = query_set(normalize(testing::random_matrix(rng, 4, 8)));
  const auto records = records_for(300);
  std::set<std::size_t> previous = rows_of(retrieve(records, images, queries, {0.0, QueryKind::image}));
  for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
    const auto current = rows_of(retrieve(records, images, queries, {tau, QueryKind::image}));
    CHECK(std::includes(previous.begin(), previous.end(), current.begin(), current.end()));
    previous = current;
  }
}

TEST_CASE("single query retrieve equals cosine_scan") {
  Rng rng(5);
  const auto images = normalize(testing::random_matrix(rng, 120, 12));
  const auto q = normalize(testing::random_matrix(rng, 1, 12));
  const auto ds = retrieve(records_for(120), images, query_set(q), {0.1, QueryKind::image});
  const auto hits = cosine_scan(images, q.row(0), 0.1);
  REQUIRE(ds.size() == hits.size());
  for (std::size_t k = 0; k < hits.size(); ++k) {
    CHECK(ds[k].row == hits[k].row);
    CHECK(ds[k].score == hits[k].similarity);
  }
}

TEST_CASE("tune_tau") {
  EmbeddingMatrix query(1, 2, {1.0f, 0.0f});
  SUBCASE("separable with the gap at 0.5") {
    EmbeddingMatrix val(4, 2);
    const double cosines[] = {0.6, 0.65, 0.4, 0.35};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto v = at_cosine(cosines[i]);
      std::copy(v.begin(), v.end(), val.row(i).begin());
    }
    const std::vector<int> labels{1, 1, 0, 0};
    const std::vector<double> grid{0.3, 0.5, 0.7};
    CHECK(tune_tau(val, labels, query, grid) == 0.5);
    const std::vector<double> single{0.7};
    CHECK(tune_tau(val, labels, query, single) == 0.7);
  }
  SUBCASE("matches an exhaustive accuracy loop") {
    Rng rng(6);
    const auto val = normalize(testing::random_matrix(rng, 80, 2));
    std::vector<int> labels(80);
    for (std::size_t i = 0; i < 80; ++i) labels[i] = val.row(i)[0] > 0.3f ? 1 : 0;
    std::vector<double> grid;
    for (int k = 0; k <= 10; ++k) grid.push_back(k / 10.0);
    double best_tau = -1, best_acc = -1;
    for (double tau : grid) {
      int correct = 0;
      for (std::size_t i = 0; i < 80; ++i) {
        correct += ((testing::naive_dot(val.row(i), query.row(0)) >= tau ? 1 : 0) == labels[i]);
      }
      if (correct > best_acc) {
        best_acc = correct;
        best_tau = tau;
      }
    }
    CHECK(tune_tau(val, labels, query, grid) == best_tau);
  }
  SUBCASE("empty grid") {
    EmbeddingMatrix val(1, 2, {1.0f, 0.0f});
    const std::vector<int> labels{1};
    CHECK_THROWS_AS(tune_tau(val, labels, query, std::vector<double>{}), ConfigError);
  }
}
