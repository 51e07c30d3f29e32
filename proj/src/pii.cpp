#include "sonoscan/pii.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include <boost/regex.hpp>

#include "sonoscan/error.hpp"
#include "sonoscan/io.hpp"

namespace sonoscan {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& core_entity_types() {
  static const std::vector<std::string> types = {entity::kName, entity::kLocation, entity::kPhone,
                                                 entity::kDateTime};
  return types;
}

bool is_core_entity_type(const std::string& type) {
  const auto& types = core_entity_types();
  return std::find(types.begin(), types.end(), type) != types.end();
}

void AnalyzerConfig::validate() const {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
    throw ConfigError("pii score threshold must lie in [0,1]");
  }
  if (context_window_tokens < 0) throw ConfigError("context window must be non-negative");
  if (!(context_boost >= 0.0 && context_boost <= 1.0)) {
    throw ConfigError("context boost must lie in [0,1]");
  }
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

struct Token {
  std::size_t begin;
  std::size_t end;
  std::string lower;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    tokens.push_back({i, j, lower(text.substr(i, j - i))});
    i = j;
  }
  return tokens;
}

bool capitalized(const std::string& text, const Token& t) {
  return std::isupper(static_cast<unsigned char>(text[t.begin])) != 0;
}

bool alphabetic(const std::string& text, const Token& t) {
  for (std::size_t k = t.begin; k < t.end; ++k) {
    if (!std::isalpha(static_cast<unsigned char>(text[k]))) return false;
  }
  return true;
}

// "Smith": upper first letter, lower rest.
bool titlecase(const std::string& text, const Token& t) {
  if (!capitalized(text, t)) return false;
  for (std::size_t k = t.begin + 1; k < t.end; ++k) {
    if (!std::islower(static_cast<unsigned char>(text[k]))) return false;
  }
  return true;
}

bool single_space_between(const std::string& text, const Token& a, const Token& b) {
  return b.begin == a.end + 1 && text[a.end] == ' ';
}

struct Phrases {
  std::unordered_set<std::string> entries;  // lowercase, words joined by one space
  std::size_t max_words = 0;
};

Phrases load_phrases(const fs::path& path) {
  Phrases phrases;
  for (const auto& line : io::read_word_list(path)) {
    std::string joined;
    std::size_t words = 0;
    for (const auto& t : tokenize(line)) {
      if (!joined.empty()) joined += ' ';
      joined += t.lower;
      ++words;
    }
    if (words == 0) continue;
    phrases.entries.insert(joined);
    phrases.max_words = std::max(phrases.max_words, words);
  }
  return phrases;
}

struct Candidate {
  std::size_t begin;  // bytes
  std::size_t end;
  double score;
  std::size_t recognizer;
};

}  // namespace

struct RecognizerSet::Compiled {
  std::vector<std::pair<boost::regex, double>> patterns;
  Phrases gazetteer;
  std::unordered_set<std::string> surnames;
  std::unordered_set<std::string> blocklist;
  std::unordered_set<std::string> context;
};

RecognizerSet::RecognizerSet() = default;
RecognizerSet::~RecognizerSet() = default;
RecognizerSet::RecognizerSet(RecognizerSet&&) noexcept = default;
RecognizerSet& RecognizerSet::operator=(RecognizerSet&&) noexcept = default;

const std::vector<RecognizerSpec>& RecognizerSet::specs() const { return specs_; }
const std::vector<RecognizerSet::Compiled>& RecognizerSet::compiled() const { return compiled_; }

std::set<std::string> RecognizerSet::entity_types() const {
  std::set<std::string> types;
  for (const auto& s : specs_) {
    if (s.enabled) types.insert(s.entity_type);
  }
  return types;
}

RecognizerSet RecognizerSet::build(const std::vector<RecognizerSpec>& specs) {
  RecognizerSet set;
  std::set<std::string> ids;
  for (const auto& spec : specs) {
    if (spec.id.empty()) throw ConfigError("recognizer without an id");
    if (!ids.insert(spec.id).second) throw ConfigError("duplicate recognizer id '" + spec.id + "'");
    if (spec.entity_type.empty()) {
      throw ConfigError("recognizer '" + spec.id + "' has no entity_type");
    }
    if (!spec.enabled) continue;

    Compiled c;
    auto check_score = [&](double s) {
      if (!(s > 0.0 && s <= 1.0)) {
        throw ConfigError("recognizer '" + spec.id + "' has score " + std::to_string(s) +
                          " outside (0,1]");
      }
    };
    for (std::size_t k = 0; k < spec.patterns.size(); ++k) {
      check_score(spec.patterns[k].score);
      try {
        c.patterns.emplace_back(boost::regex(spec.patterns[k].regex, boost::regex::perl),
                                spec.patterns[k].score);
      } catch (const boost::regex_error& e) {
        throw ConfigError("recognizer '" + spec.id + "' pattern " + std::to_string(k) +
                          ": invalid regex at position " + std::to_string(e.position()) + ": " +
                          e.what());
      }
    }
    switch (spec.kind) {
      case RecognizerKind::pattern:
        if (spec.patterns.empty()) {
          throw ConfigError("pattern recognizer '" + spec.id + "' has no patterns");
        }
        break;
      case RecognizerKind::name:
        check_score(spec.extended_score);
        if (!spec.surname_gazetteer.empty()) {
          for (const auto& w : io::read_word_list(spec.surname_gazetteer)) {
            c.surnames.insert(lower(w));
          }
        }
        [[fallthrough]];
      case RecognizerKind::gazetteer:
        check_score(spec.gazetteer_score);
        if (spec.gazetteer.empty()) {
          throw ConfigError("recognizer '" + spec.id + "' needs a gazetteer file");
        }
        c.gazetteer = load_phrases(spec.gazetteer);
        break;
    }
    for (const auto& w : spec.extension_blocklist) c.blocklist.insert(lower(w));
    for (const auto& w : spec.context_words) c.context.insert(lower(w));
    if (spec.validator && spec.validator->min_digits > spec.validator->max_digits) {
      throw ConfigError("recognizer '" + spec.id + "' has an empty digit-count range");
    }
    set.specs_.push_back(spec);
    set.compiled_.push_back(std::move(c));
  }
  return set;
}

std::vector<RecognizerSpec> parse_recognizer_specs(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object() || !doc.contains("recognizers") || !doc["recognizers"].is_array()) {
    throw ConfigError("recognizer spec needs a 'recognizers' array");
  }
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  std::vector<RecognizerSpec> specs;
  for (const auto& r : doc["recognizers"]) {
    RecognizerSpec s;
    try {
      s.id = r.at("id").get<std::string>();
      s.entity_type = r.at("entity_type").get<std::string>();
      const std::string kind = r.value("kind", "pattern");
      if (kind == "pattern") {
        s.kind = RecognizerKind::pattern;
      } else if (kind == "gazetteer") {
        s.kind = RecognizerKind::gazetteer;
      } else if (kind == "name") {
        s.kind = RecognizerKind::name;
      } else {
        throw ConfigError("recognizer '" + s.id + "': unknown kind '" + kind + "'");
      }
      if (r.contains("patterns")) {
        for (const auto& p : r["patterns"]) {
          s.patterns.push_back({p.at("regex").get<std::string>(), p.value("score", 0.5)});
        }
      }
      if (r.contains("gazetteer")) s.gazetteer = resolve(r["gazetteer"].get<std::string>());
      s.gazetteer_score = r.value("score", s.gazetteer_score);
      if (r.contains("surname_gazetteer")) {
        s.surname_gazetteer = resolve(r["surname_gazetteer"].get<std::string>());
      }
      s.extended_score = r.value("extended_score", s.extended_score);
      s.extension_blocklist = r.value("extension_blocklist", std::vector<std::string>{});
      s.context_words = r.value("context_words", std::vector<std::string>{});
      if (r.contains("validator") && !r["validator"].is_null()) {
        const auto& v = r["validator"];
        if (v.value("type", "") != "digit_count") {
          throw ConfigError("recognizer '" + s.id + "': unsupported validator");
        }
        s.validator = DigitCountValidator{v.value("min", 7), v.value("max", 15)};
      }
      s.merge_group = r.value("merge_group", "");
      s.enabled = r.value("enabled", true);
    } catch (const json::exception& e) {
      throw ConfigError("recognizer spec entry '" + s.id + "': " + e.what());
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

RecognizerSet load_recognizers(const fs::path& spec_file) {
  json doc;
  try {
    doc = io::read_json(spec_file);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return RecognizerSet::build(parse_recognizer_specs(doc, spec_file.parent_path()));
}

namespace {

void match_patterns(const std::string& text, const RecognizerSet::Compiled& c, std::size_t rec,
                    std::vector<Candidate>& out) {
  for (const auto& [re, score] : c.patterns) {
    for (boost::sregex_iterator it(text.begin(), text.end(), re), end; it != end; ++it) {
      const auto& m = *it;
      if (m.length(std::size_t{0}) == 0) continue;
      const auto begin = static_cast<std::size_t>(m.position(std::size_t{0}));
      out.push_back({begin, begin + static_cast<std::size_t>(m.length(std::size_t{0})), score, rec});
    }
  }
}

void match_gazetteer(const std::string& text, const std::vector<Token>& tokens,
                     const RecognizerSet::Compiled& c, double score, std::size_t rec,
                     std::vector<Candidate>& out) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string joined;
    std::size_t best = 0;
    for (std::size_t len = 1; len <= c.gazetteer.max_words && i + len <= tokens.size(); ++len) {
      const Token& t = tokens[i + len - 1];
      if (!capitalized(text, t)) break;
      if (len > 1) {
        if (!single_space_between(text, tokens[i + len - 2], t)) break;
        joined += ' ';
      }
      joined += t.lower;
      if (c.gazetteer.entries.contains(joined)) best = len;
    }
    if (best == 0) continue;
    out.push_back({tokens[i].begin, tokens[i + best - 1].end, score, rec});
    i += best - 1;
  }
}

void match_names(const std::string& text, const std::vector<Token>& tokens,
                 const RecognizerSpec& spec, const RecognizerSet::Compiled& c, std::size_t rec,
                 std::vector<Candidate>& out) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (!capitalized(text, t) || !c.gazetteer.entries.contains(t.lower) ||
        c.blocklist.contains(t.lower)) {
      continue;
    }
    if (i + 1 < tokens.size()) {
      const Token& next = tokens[i + 1];
      const bool surname_shape =
          capitalized(text, next) && alphabetic(text, next) && next.end - next.begin >= 2 &&
          !c.blocklist.contains(next.lower) &&
          (titlecase(text, next) || c.surnames.contains(next.lower));
      if (surname_shape && single_space_between(text, t, next)) {
        out.push_back({t.begin, next.end, spec.extended_score, rec});
        ++i;
        continue;
      }
    }
    out.push_back({t.begin, t.end, spec.gazetteer_score, rec});
  }
}

bool has_context(const std::vector<Token>& tokens, const Candidate& cand,
                 const std::unordered_set<std::string>& words, int window) {
  if (words.empty()) return false;
  const auto first_inside = std::partition_point(
      tokens.begin(), tokens.end(), [&](const Token& t) { return t.end <= cand.begin; });
  const auto first_after = std::partition_point(
      first_inside, tokens.end(), [&](const Token& t) { return t.begin < cand.end; });
  const auto w = static_cast<std::ptrdiff_t>(window);
  const auto lo = first_inside - std::min(w, first_inside - tokens.begin());
  for (auto it = lo; it != first_inside; ++it) {
    if (words.contains(it->lower)) return true;
  }
  const auto hi = first_after + std::min(w, tokens.end() - first_after);
  for (auto it = first_after; it != hi; ++it) {
    if (words.contains(it->lower)) return true;
  }
  return false;
}

int digit_count(const std::string& text, std::size_t begin, std::size_t end) {
  int n = 0;
  for (std::size_t k = begin; k < end; ++k) {
    if (std::isdigit(static_cast<unsigned char>(text[k]))) ++n;
  }
  return n;
}

// Code-point offset of every byte offset; exact at code-point boundaries.
std::vector<std::size_t> code_point_index(const std::string& text) {
  std::vector<std::size_t> index(text.size() + 1);
  std::size_t cp = 0;
  for (std::size_t b = 0; b < text.size(); ++b) {
    index[b] = cp;
    if ((static_cast<unsigned char>(text[b]) & 0xC0) != 0x80) ++cp;
  }
  index[text.size()] = cp;
  return index;
}

}  // namespace

std::vector<EntitySpan> analyze(const std::string& text, const RecognizerSet& recognizers,
                                const AnalyzerConfig& config) {
  config.validate();
  if (text.empty()) return {};
  const auto tokens = tokenize(text);
  const auto& specs = recognizers.specs();
  const auto& compiled = recognizers.compiled();

  std::vector<Candidate> candidates;
  for (std::size_t r = 0; r < specs.size(); ++r) {
    const auto& spec = specs[r];
    const auto& c = compiled[r];
    const std::size_t first_new = candidates.size();
    match_patterns(text, c, r, candidates);
    if (spec.kind == RecognizerKind::gazetteer) {
      match_gazetteer(text, tokens, c, spec.gazetteer_score, r, candidates);
    } else if (spec.kind == RecognizerKind::name) {
      match_names(text, tokens, spec, c, r, candidates);
    }
    for (std::size_t k = first_new; k < candidates.size(); ++k) {
      if (has_context(tokens, candidates[k], c.context, config.context_window_tokens)) {
        candidates[k].score = std::min(1.0, candidates[k].score + config.context_boost);
      }
    }
  }

  std::erase_if(candidates, [&](const Candidate& cand) {
    const auto& v = specs[cand.recognizer].validator;
    if (v) {
      const int digits = digit_count(text, cand.begin, cand.end);
      if (digits < v->min_digits || digits > v->max_digits) return true;
    }
    return cand.score < config.score_threshold;
  });

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto la = a.end - a.begin, lb = b.end - b.begin;
    if (la != lb) return la > lb;
    if (a.begin != b.begin) return a.begin < b.begin;
    return a.recognizer < b.recognizer;
  });
  std::vector<Candidate> kept;
  for (const auto& cand : candidates) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) {
      return cand.begin < k.end && k.begin < cand.end;
    });
    if (!overlaps) kept.push_back(cand);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& a, const Candidate& b) { return a.begin < b.begin; });

  struct Merged {
    Candidate span;
    std::string type;
    std::string recognizer;
    std::string group;
  };
  std::vector<Merged> merged;
  for (const auto& cand : kept) {
    const auto& spec = specs[cand.recognizer];
    if (!merged.empty()) {
      auto& prev = merged.back();
      const bool pair = (prev.group == "date" && spec.merge_group == "time") ||
                        (prev.group == "time" && spec.merge_group == "date");
      const bool adjacent = cand.begin == prev.span.end ||
                            (cand.begin == prev.span.end + 1 && text[prev.span.end] == ' ');
      if (pair && adjacent && prev.type == spec.entity_type) {
        prev.span.end = cand.end;
        prev.span.score = std::max(prev.span.score, cand.score);
        prev.recognizer += "+" + spec.id;
        prev.group = "datetime";
        continue;
      }
    }
    merged.push_back({cand, spec.entity_type, spec.id, spec.merge_group});
  }

  const auto cp = code_point_index(text);
  std::vector<EntitySpan> out;
  out.reserve(merged.size());
  for (const auto& m : merged) {
    out.push_back({m.type, cp[m.span.begin], cp[m.span.end],
                   text.substr(m.span.begin, m.span.end - m.span.begin), m.span.score,
                   m.recognizer});
  }
  return out;
}

json to_json(const EntitySpan& s) {
  return {{"entity_type", s.entity_type}, {"start", s.start},   {"end", s.end},
          {"text", s.text},               {"score", s.score},   {"recognizer", s.recognizer}};
}

EntitySpan span_from_json(const json& doc) {
  EntitySpan s;
  s.entity_type = doc.at("entity_type").get<std::string>();
  s.start = doc.value("start", std::size_t{0});
  s.end = doc.value("end", std::size_t{0});
  s.text = doc.at("text").get<std::string>();
  s.score = doc.value("score", 1.0);
  s.recognizer = doc.value("recognizer", "");
  return s;
}

std::size_t utf8_length(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string utf8_substr(const std::string& s, std::size_t start, std::size_t end) {
  std::size_t cp = 0;
  std::size_t b_start = s.size(), b_end = s.size();
  for (std::size_t b = 0; b <= s.size(); ++b) {
    const bool boundary = b == s.size() || (static_cast<unsigned char>(s[b]) & 0xC0) != 0x80;
    if (!boundary) continue;
    if (cp == start && b_start == s.size()) b_start = b;
    if (cp == end) {
      b_end = b;
      break;
    }
    ++cp;
  }
  if (start > end || b_start > b_end) return {};
  return s.substr(b_start, b_end - b_start);
}

}  // namespace sonoscan
