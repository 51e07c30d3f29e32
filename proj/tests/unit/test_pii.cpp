#include <doctest.h>

#include <fstream>

#include "sonoscan/error.hpp"
#include "sonoscan/pii.hpp"
#include "sonoscan/random.hpp"
#include "support.hpp"

using namespace sonoscan;
namespace fs = std::filesystem;

namespace {

const fs::path kDefaultSpec = fs::path(SONOSCAN_DATA_DIR) / "recognizers" / "default.json";

const RecognizerSet& defaults() {
  static const RecognizerSet set = load_recognizers(kDefaultSpec);
  return set;
}

using Pair = std::pair<std::string, std::string>;

std::vector<Pair> pairs(const std::vector<EntitySpan>& spans) {
  std::vector<Pair> out;
  for (const auto& s : spans) out.push_back({s.entity_type, s.text});
  return out;
}

std::vector<Pair> run(const std::string& text) { return pairs(analyze(text, defaults())); }

bool has_type(const std::vector<EntitySpan>& spans, const std::string& type) {
  for (const auto& s : spans) {
    if (s.entity_type == type) return true;
  }
  return false;
}

RecognizerSpec pattern(std::string id, std::string type, std::string regex, double score) {
  RecognizerSpec s;
  s.id = std::move(id);
  s.entity_type = std::move(type);
  s.patterns.push_back({std::move(regex), score});
  return s;
}

void check_invariants(const std::string& text, const std::vector<EntitySpan>& spans,
                      const AnalyzerConfig& config) {
  const auto n = utf8_length(text);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const auto& s = spans[k];
    CHECK(s.start < s.end);
    CHECK(s.end <= n);
    CHECK(s.text == utf8_substr(text, s.start, s.end));
    CHECK(s.score >= config.score_threshold);
    CHECK(s.score <= 1.0);
    if (k > 0) CHECK(spans[k - 1].end <= s.start);
  }
}

}  // namespace

TEST_CASE("default recognizers") {
  CHECK(defaults().entity_types() ==
        std::set<std::string>{"NAME", "LOCATION", "DATE_TIME", "PHONE_NUMBER"});

  SUBCASE("announcement with three entity types") {
    const auto spans = analyze("Baby Chloe due 12/05/2021, call (555) 123-4567.", defaults());
    CHECK(pairs(spans) == std::vector<Pair>{{"NAME", "Chloe"},
                                            {"DATE_TIME", "12/05/2021"},
                                            {"PHONE_NUMBER", "(555) 123-4567"}});
    REQUIRE(spans.size() == 3);
    CHECK(spans[0].start == 5);
    CHECK(spans[0].end == 10);
    CHECK(spans[0].recognizer == "given_name");
  }
  SUBCASE("empty text") { CHECK(analyze("", defaults()).empty()); }
  SUBCASE("too few digits for a phone") { CHECK_FALSE(has_type(analyze("call 123", defaults()), "PHONE_NUMBER")); }
}

TEST_CASE("dates and times") {
  CHECK(run("03-11-2019 10:42:07AM") == std::vector<Pair>{{"DATE_TIME", "03-11-2019 10:42:07AM"}});
  CHECK(run("no dates here").empty());
  CHECK(run("Jan 3, 2020") == std::vector<Pair>{{"DATE_TIME", "Jan 3, 2020"}});
  CHECK(run("scan 2021-03-11") == std::vector<Pair>{{"DATE_TIME", "2021-03-11"}});
  CHECK(run("exam 11.04.2019") == std::vector<Pair>{{"DATE_TIME", "11.04.2019"}});
  CHECK(run("due 5 March 2023") == std::vector<Pair>{{"DATE_TIME", "5 March 2023"}});
  CHECK(run("at 9:05 pm") == std::vector<Pair>{{"DATE_TIME", "9:05 pm"}});
  SUBCASE("two spaces keep date and time apart") {
    CHECK(run("03/02/2020  14:22") == std::vector<Pair>{{"DATE_TIME", "03/02/2020"}, {"DATE_TIME", "14:22"}});
  }
  SUBCASE("gestational age is off by default") { CHECK(run("GA 20w3d").empty()); }
}

TEST_CASE("phone numbers") {
  CHECK(run("(555) 123-4567") == std::vector<Pair>{{"PHONE_NUMBER", "(555) 123-4567"}});
  CHECK(run("+1 555 123 4567") == std::vector<Pair>{{"PHONE_NUMBER", "+1 555 123 4567"}});
  CHECK(run("12/05/2021") == std::vector<Pair>{{"DATE_TIME", "12/05/2021"}});
  CHECK(run("call 312.555.0147") == std::vector<Pair>{{"PHONE_NUMBER", "312.555.0147"}});
  SUBCASE("short local number needs context") {
    CHECK(run("room 555-1234").empty());
    CHECK(run("tel 555-1234") == std::vector<Pair>{{"PHONE_NUMBER", "555-1234"}});
  }
}

TEST_CASE("names") {
  CHECK(run("Jessica Smith") == std::vector<Pair>{{"NAME", "Jessica Smith"}});
  CHECK(run("chloe").empty());
  CHECK(run("Baby Chole").empty());
  SUBCASE("extension stops at blocklisted words") {
    CHECK(run("Emma Clinic") == std::vector<Pair>{{"NAME", "Emma"}});
  }
  SUBCASE("extended span scores higher than a bare given name") {
    const auto bare = analyze("Jessica", defaults());
    const auto full = analyze("Jessica Smith", defaults());
    REQUIRE(bare.size() == 1);
    REQUIRE(full.size() == 1);
    CHECK(bare[0].score == doctest::Approx(0.5));
    CHECK(full[0].score == doctest::Approx(0.7));
  }
  SUBCASE("context word boosts by delta") {
    const auto spans = analyze("baby Jessica", defaults());
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].score == doctest::Approx(0.85));
  }
}

TEST_CASE("locations") {
  CHECK(run("123 Maple Ave") == std::vector<Pair>{{"LOCATION", "123 Maple Ave"}});
  CHECK(run("Springfield") == std::vector<Pair>{{"LOCATION", "Springfield"}});
  CHECK(run("avenue of approach").empty());
  CHECK(run("born in San Diego") == std::vector<Pair>{{"LOCATION", "San Diego"}});
  CHECK(run("springfield").empty());
}

TEST_CASE("context window counts tokens") {
  testing::TempDir dir;
  const auto spec = pattern("code", "CODE", "\\bXZ\\d+\\b", 0.3);
  auto with_context = spec;
  with_context.context_words = {"ref"};
  const auto set = RecognizerSet::build({with_context});
  AnalyzerConfig c;
  c.context_window_tokens = 2;
  CHECK(analyze("ref a XZ1", set, c).size() == 1);
  CHECK(analyze("ref a b XZ1", set, c).empty());
  CHECK(analyze("XZ1 a ref", set, c).size() == 1);
  c.context_window_tokens = 5;
  CHECK(analyze("ref a b XZ1", set, c).size() == 1);
}

TEST_CASE("overlap resolution") {
  SUBCASE("higher score wins") {
    const auto set = RecognizerSet::build({pattern("a", "A", "abc", 0.6), pattern("b", "B", "bcd", 0.8)});
    CHECK(pairs(analyze("abcd", set)) == std::vector<Pair>{{"B", "bcd"}});
  }
  SUBCASE("equal score prefers the longer span") {
    const auto set = RecognizerSet::build({pattern("a", "A", "abc", 0.6), pattern("b", "B", "bcde", 0.6)});
    CHECK(pairs(analyze("abcde", set)) == std::vector<Pair>{{"B", "bcde"}});
  }
  SUBCASE("equal score and length prefers the earlier start") {
    const auto set = RecognizerSet::build({pattern("b", "B", "bcd", 0.6), pattern("a", "A", "abc", 0.6)});
    CHECK(pairs(analyze("abcd", set)) == std::vector<Pair>{{"A", "abc"}});
  }
  SUBCASE("non-overlapping spans survive") {
    const auto set = RecognizerSet::build({pattern("a", "A", "ab", 0.6), pattern("b", "B", "cd", 0.9)});
    CHECK(pairs(analyze("ab cd", set)) == std::vector<Pair>{{"A", "ab"}, {"B", "cd"}});
  }
}

TEST_CASE("threshold and validator") {
  auto spec = pattern("num", "NUM", "\\d[\\d-]*\\d", 0.5);
  spec.validator = DigitCountValidator{3, 4};
  const auto set = RecognizerSet::build({spec});
  CHECK(pairs(analyze("12 123 12-34 12345", set)) == std::vector<Pair>{{"NUM", "123"}, {"NUM", "12-34"}});
  AnalyzerConfig high;
  high.score_threshold = 0.6;
  CHECK(analyze("123", set, high).empty());
  AnalyzerConfig bad;
  bad.score_threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("spec loading") {
  testing::TempDir dir;
  SUBCASE("bad regex names the recognizer") {
    testing::write_text(dir / "bad.json",
                        R"({"recognizers":[{"id":"broken_one","entity_type":"NAME","patterns":[{"regex":"(ab","score":0.5}]}]})");
    try {
      load_recognizers(dir / "bad.json");
      FAIL("expected a load error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("broken_one") != std::string::npos);
    }
  }
  SUBCASE("score outside (0,1] is rejected") {
    testing::write_text(dir / "score.json",
                        R"({"recognizers":[{"id":"s","entity_type":"X","patterns":[{"regex":"a","score":0}]}]})");
    CHECK_THROWS_AS(load_recognizers(dir / "score.json"), ConfigError);
  }
  SUBCASE("missing gazetteer") {
    testing::write_text(dir / "gz.json",
                        R"({"recognizers":[{"id":"g","entity_type":"LOCATION","kind":"gazetteer","gazetteer":"nope.txt"}]})");
    CHECK_THROWS_AS(load_recognizers(dir / "gz.json"), ConfigError);
  }
  SUBCASE("a fifth entity type from a custom spec") {
    testing::write_text(dir / "wards.txt", "# wards\nmaternity east\n");
    testing::write_text(dir / "custom.json", R"({"recognizers":[
      {"id":"mrn","entity_type":"MEDICAL_RECORD","patterns":[{"regex":"\\bMRN[- ]?\\d{6}\\b","score":0.8}]},
      {"id":"ward","entity_type":"WARD","kind":"gazetteer","gazetteer":"wards.txt","score":0.6}]})");
    const auto set = load_recognizers(dir / "custom.json");
    CHECK(set.entity_types() == std::set<std::string>{"MEDICAL_RECORD", "WARD"});
    CHECK(pairs(analyze("MRN-123456 on Maternity East", set)) ==
          std::vector<Pair>{{"MEDICAL_RECORD", "MRN-123456"}, {"WARD", "Maternity East"}});
  }
}

TEST_CASE("unicode offsets count code points") {
  const std::string text = "Bébé Chloe né 12/05/2021";
  const auto spans = analyze(text, defaults());
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].text == "Chloe");
  CHECK(spans[0].start == 5);
  CHECK(spans[1].start == 14);
  CHECK(utf8_length("é") == 1);
  CHECK(utf8_substr(text, 0, 4) == "Bébé");
}

TEST_CASE("invariants on random ultrasound-like texts") {
  const std::vector<std::string> pieces{
      "Baby",   "Chloe",  "Smith",      "due",         "12/05/2021", "10:42",        "AM",   "call",
      "(555)",  "123-4567", "Springfield", "123",       "Maple",      "Ave",          "Jan",  "3,",
      "2020",   "Dr",     "Emma",       "Wilson",      "+1",         "555",          "at",   "Clinic",
      "San",    "Diego",  "GA",         "20w3d",       "EDD",        "03-11-2019",   "née",  "—"};
  const auto irrelevant = pattern("never", "NEVER", "(?!x)x", 0.9);
  auto specs = defaults().specs();
  specs.push_back(irrelevant);
  const auto extended = RecognizerSet::build(specs);

  Rng rng(11);
  AnalyzerConfig config;
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const auto words = 1 + rng.below(14);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) text += rng.below(5) == 0 ? "  " : " ";
      text += pieces[rng.below(pieces.size())];
    }
    const auto spans = analyze(text, defaults(), config);
    check_invariants(text, spans, config);
    CHECK(analyze(text, defaults(), config) == spans);
    CHECK(analyze(text, extended, config) == spans);
  }
}

TEST_CASE("span json round trip") {
  const auto spans = analyze("Baby Chloe due 12/05/2021", defaults());
  for (const auto& s : spans) CHECK(span_from_json(to_json(s)) == s);
}
