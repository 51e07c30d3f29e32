#include <doctest.h>

#include <thread>

#include "sonoscan/error.hpp"
#include "sonoscan/random.hpp"
#include "sonoscan/review.hpp"
#include "support.hpp"

// After the Eigen-using headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace sonoscan;
using nlohmann::json;

namespace {

AnnotationRecord record(std::string image, std::string annotator, Verdict verdict,
                        std::vector<TruthSpan> spans = {}, int revision = 1) {
  AnnotationRecord r;
  r.image_id = std::move(image);
  r.annotator = std::move(annotator);
  r.verdict = verdict;
  r.truth_spans = std::move(spans);
  r.revision = revision;
  return r;
}

std::vector<ReviewItem> items(std::size_t n) {
  std::vector<ReviewItem> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].image_id = "img" + std::to_string(i);
    out[i].score = 1.0 - 0.1 * static_cast<double>(i);
    out[i].source = "retrieval";
  }
  return out;
}

json annotation(const std::string& annotator, const std::string& verdict, int revision = 1,
                json spans = json::array()) {
  return {{"annotator", annotator}, {"verdict", verdict}, {"revision", revision}, {"truth_spans", spans}};
}

}  // namespace

TEST_CASE("consolidate") {
  SUBCASE("single annotator keeps spans verbatim") {
    const std::vector<TruthSpan> spans{{"NAME", "Jesica"}, {"NAME", "Jessica"}, {"DATE_TIME", "1/2/20"}};
    const auto c = consolidate({record("a", "ann", Verdict::confirm, spans)});
    CHECK(c.items.at("a").spans == spans);
    CHECK(c.items.at("a").verdict == Verdict::confirm);
    CHECK(c.flagged.empty());
  }
  SUBCASE("fuzzy duplicates across annotators collapse to the longer text") {
    const auto c = consolidate({record("a", "x", Verdict::confirm, {{"NAME", "Jesica"}}),
                                record("a", "y", Verdict::confirm, {{"NAME", "Jessica"}, {"LOCATION", "Jessica"}})});
    CHECK(c.items.at("a").spans == std::vector<TruthSpan>{{"NAME", "Jessica"}, {"LOCATION", "Jessica"}});
    CHECK(c.items.at("a").annotators == std::vector<std::string>{"x", "y"});
  }
  SUBCASE("verdict conflict is flagged and excluded from exports") {
    const auto c = consolidate({record("a", "x", Verdict::confirm), record("a", "y", Verdict::reject),
                                record("b", "x", Verdict::confirm)});
    CHECK(c.flagged == std::vector<std::string>{"a"});
    CHECK_FALSE(c.items.at("a").verdict);
    const auto e = export_retraining(c);
    CHECK(e.positives == std::vector<std::string>{"b"});
    CHECK(e.flagged == std::vector<std::string>{"a"});
    const auto gt = export_ground_truth(c);
    REQUIRE(gt.size() == 1);
    CHECK(gt[0].image_id == "b");
  }
  SUBCASE("latest revision wins") {
    const auto c = consolidate({record("a", "x", Verdict::confirm, {}, 1), record("a", "x", Verdict::reject, {}, 2)});
    CHECK(c.items.at("a").verdict == Verdict::reject);
  }
  SUBCASE("order independent and idempotent") {
    std::vector<AnnotationRecord> log{
        record("a", "x", Verdict::confirm, {{"NAME", "Chloe"}, {"PHONE_NUMBER", "555-1234"}}),
        record("a", "y", Verdict::confirm, {{"NAME", "Chole"}, {"DATE_TIME", "12/05/2021"}}),
        record("a", "z", Verdict::confirm, {{"NAME", "Chloe Smith"}}),
        record("b", "y", Verdict::reject),
        record("b", "x", Verdict::reject, {}, 1),
        record("c", "x", Verdict::confirm, {{"LOCATION", "Boston"}}),
        record("c", "x", Verdict::confirm, {{"LOCATION", "Austin"}}, 2)};
    const auto base = consolidate(log);
    Rng rng(5);
    for (int t = 0; t < 30; ++t) {
      rng.shuffle(std::span(log));
      const auto c = consolidate(log);
      REQUIRE(c.items.size() == base.items.size());
      for (const auto& [id, item] : base.items) {
        CHECK(c.items.at(id).spans == item.spans);
        CHECK(c.items.at(id).verdict == item.verdict);
      }
    }
    // Feeding the consolidated result back as one annotator changes nothing.
    std::vector<AnnotationRecord> again;
    for (const auto& [id, item] : base.items) {
      if (item.verdict) again.push_back(record(id, "merged", *item.verdict, item.spans));
    }
    const auto twice = consolidate(again);
    for (const auto& [id, item] : twice.items) CHECK(item.spans == base.items.at(id).spans);
  }
}

TEST_CASE("export_retraining") {
  CHECK(export_retraining(consolidate({})).positives.empty());
  std::vector<AnnotationRecord> log;
  for (int i = 0; i < 3; ++i) log.push_back(record("p" + std::to_string(i), "x", Verdict::confirm));
  for (int i = 0; i < 2; ++i) log.push_back(record("n" + std::to_string(i), "x", Verdict::reject));
  const auto c = consolidate(log);
  const auto e = export_retraining(c);
  CHECK(e.positives.size() == 3);
  CHECK(e.negatives.size() == 2);
  CHECK(export_retraining(c, Verdict::reject).positives.empty());
  CHECK(export_retraining(c, Verdict::reject).negatives.size() == 2);
}

TEST_CASE("annotation log") {
  testing::TempDir dir;
  const auto path = dir / "log.jsonl";
  {
    AnnotationLog log(path);
    CHECK(log.records().empty());
    log.append(record("a", "x", Verdict::confirm, {{"NAME", "Ava"}}));
    log.append(record("a", "x", Verdict::reject, {}, 2));
    CHECK(log.latest_revision("a", "x") == 2);
    CHECK(log.latest_revision("a", "y") == 0);
  }
  {
    AnnotationLog replay(path);
    REQUIRE(replay.records().size() == 2);
    CHECK(replay.records()[0].truth_spans == std::vector<TruthSpan>{{"NAME", "Ava"}});
    CHECK(replay.latest_revision("a", "x") == 2);
  }
  SUBCASE("corrupt line is reported by number") {
    auto text = testing::read_text(path);
    testing::write_text(path, text + "{not json\n");
    try {
      AnnotationLog bad(path);
      FAIL("expected corrupt log error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("repeated revision is corrupt") {
    auto text = testing::read_text(path);
    const auto first = text.substr(0, text.find('\n') + 1);
    testing::write_text(path, text + first);
    CHECK_THROWS_AS(AnnotationLog{path}, DataError);
  }
}

TEST_CASE("review service") {
  testing::TempDir dir;
  const auto log_path = dir / "log.jsonl";
  ReviewService service(items(5), log_path);

  CHECK(service.stats()["annotated"] == 0);
  CHECK(service.stats()["pending"] == 5);
  CHECK(service.queue("pending", 2)["items"].size() == 2);
  CHECK(service.queue("pending", 2)["total"] == 5);
  CHECK(service.queue("pending", 10)["items"][0]["image_id"] == "img0");

  auto r = service.post_annotation("img1", annotation("ann", "confirm", 1, json::array({{{"entity_type", "NAME"}, {"text", "Ava"}}})), "");
  CHECK(r.http_status == 201);
  CHECK(r.body["timestamp"].get<std::string>().size() == 20);
  CHECK((*service.item("img1"))["status"] == "confirmed");
  CHECK(service.stats()["confirmed"] == 1);
  CHECK(service.export_ground_truth_jsonl() ==
        "{\"image_id\":\"img1\",\"spans\":[{\"entity_type\":\"NAME\",\"text\":\"Ava\"}]}\n");

  SUBCASE("stale revision conflicts") {
    const auto stale = service.post_annotation("img1", annotation("ann", "reject", 1), "");
    CHECK(stale.http_status == 409);
    CHECK(stale.body["expected_revision"] == 2);
    CHECK(service.post_annotation("img1", annotation("ann", "reject", 2), "").http_status == 201);
    CHECK((*service.item("img1"))["status"] == "rejected");
  }
  SUBCASE("bad requests") {
    CHECK(service.post_annotation("nope", annotation("ann", "confirm"), "").http_status == 404);
    CHECK(service.post_annotation("img2", annotation("ann", "maybe"), "").http_status == 400);
    CHECK(service.post_annotation("img2", json::array(), "").http_status == 400);
    json anonymous = annotation("", "confirm");
    anonymous.erase("annotator");
    CHECK(service.post_annotation("img2", anonymous, "").http_status == 400);
    CHECK(service.post_annotation("img2", anonymous, "hdr").http_status == 201);
  }
  SUBCASE("restart replays to identical state") {
    service.post_annotation("img3", annotation("ann", "reject"), "");
    service.post_annotation("img3", annotation("other", "confirm"), "");
    const auto before = service.stats();
    const auto gt = service.export_ground_truth_jsonl();
    ReviewService restarted(items(5), log_path);
    CHECK(restarted.stats() == before);
    CHECK(restarted.export_ground_truth_jsonl() == gt);
    CHECK(restarted.stats()["flagged"] == 1);
  }
}

TEST_CASE("http routes") {
  testing::TempDir dir;
  testing::write_text(dir / "img0.png", "PNGDATA");
  ReviewService service(items(3), dir / "log.jsonl", dir.path());
  httplib::Server server;
  service.register_routes(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto stats = client.Get("/api/stats");
  REQUIRE(stats);
  CHECK(json::parse(stats->body)["items"] == 3);

  auto post = client.Post("/api/items/img0/annotation", {{"X-Annotator", "hdr"}},
                          R"({"verdict":"confirm","revision":1,"truth_spans":[{"entity_type":"DATE_TIME","text":"1/2/20"}]})",
                          "application/json");
  REQUIRE(post);
  CHECK(post->status == 201);
  CHECK(json::parse(post->body)["annotator"] == "hdr");

  auto again = client.Post("/api/items/img0/annotation", {{"X-Annotator", "hdr"}},
                           R"({"verdict":"confirm","revision":1})", "application/json");
  REQUIRE(again);
  CHECK(again->status == 409);

  auto bad = client.Post("/api/items/img0/annotation", "{oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto queue = client.Get("/api/queue?status=confirmed&limit=5");
  REQUIRE(queue);
  CHECK(json::parse(queue->body)["items"][0]["image_id"] == "img0");
  CHECK(client.Get("/api/queue?status=weird")->status == 400);

  auto item = client.Get("/api/items/img0");
  REQUIRE(item);
  CHECK(json::parse(item->body)["annotations"].size() == 1);
  CHECK(client.Get("/api/items/zzz")->status == 404);

  auto gt = client.Get("/api/export/ground_truth");
  REQUIRE(gt);
  CHECK(gt->body == "{\"image_id\":\"img0\",\"spans\":[{\"entity_type\":\"DATE_TIME\",\"text\":\"1/2/20\"}]}\n");

  auto retrain = client.Get("/api/export/retraining?verdict=confirm");
  REQUIRE(retrain);
  CHECK(json::parse(retrain->body)["positives"] == json::array({"img0"}));
  CHECK(client.Get("/api/export/retraining?verdict=nah")->status == 400);

  auto image = client.Get("/api/images/img0");
  REQUIRE(image);
  CHECK(image->body == "PNGDATA");
  CHECK(image->get_header_value("Content-Type") == "image/png");
  CHECK(client.Get("/api/images/img1")->status == 404);
  CHECK(client.Get("/api/images/..%2Flog")->status == 404);

  server.stop();
  worker.join();
}
