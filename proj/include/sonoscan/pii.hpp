#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace sonoscan {

namespace entity {
inline constexpr const char* kName = "NAME";
inline constexpr const char* kLocation = "LOCATION";
inline constexpr const char* kDateTime = "DATE_TIME";
inline constexpr const char* kPhone = "PHONE_NUMBER";
}  // namespace entity

/// The four built-in entity types, in co-occurrence bit order.
const std::vector<std::string>& core_entity_types();
bool is_core_entity_type(const std::string& type);

/// Offsets count Unicode code points of the analyzed text, half-open.
struct EntitySpan {
  std::string entity_type;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
  double score = 0.0;
  std::string recognizer;

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct AnalyzerConfig {
  double score_threshold = 0.4;
  int context_window_tokens = 5;
  double context_boost = 0.35;

  void validate() const;
};

/// Drops a candidate whose digit count lies outside [min_digits, max_digits].
struct DigitCountValidator {
  int min_digits = 7;
  int max_digits = 15;
};

struct PatternSpec {
  std::string regex;
  double score = 0.5;
};

enum class RecognizerKind {
  pattern,    // regular expressions
  gazetteer,  // word-list phrases, each word capitalized in the text
  name,       // given-name gazetteer with optional surname extension
};

struct RecognizerSpec {
  std::string id;
  std::string entity_type;
  RecognizerKind kind = RecognizerKind::pattern;
  std::vector<PatternSpec> patterns;
  std::filesystem::path gazetteer;
  double gazetteer_score = 0.5;
  // name recognizers only
  std::filesystem::path surname_gazetteer;
  double extended_score = 0.7;
  std::vector<std::string> extension_blocklist;
  std::vector<std::string> context_words;
  std::optional<DigitCountValidator> validator;
  /// Adjacent spans whose recognizers carry the groups "date" and "time"
  /// (in that order, at most one space apart) are merged.
  std::string merge_group;
  bool enabled = true;
};

class RecognizerSet {
 public:
  RecognizerSet();
  ~RecognizerSet();
  RecognizerSet(RecognizerSet&&) noexcept;
  RecognizerSet& operator=(RecognizerSet&&) noexcept;

  /// Compiles patterns and reads gazetteers. Throws ConfigError naming the
  /// recognizer and regex position on a bad pattern.
  static RecognizerSet build(const std::vector<RecognizerSpec>& specs);

  const std::vector<RecognizerSpec>& specs() const;
  std::set<std::string> entity_types() const;

  struct Compiled;
  const std::vector<Compiled>& compiled() const;

 private:
  std::vector<RecognizerSpec> specs_;
  std::vector<Compiled> compiled_;
};

/// Parses a recognizer spec document; relative gazetteer paths resolve
/// against `base_dir`.
std::vector<RecognizerSpec> parse_recognizer_specs(const nlohmann::json& doc,
                                                   const std::filesystem::path& base_dir);

RecognizerSet load_recognizers(const std::filesystem::path& spec_file);

/// Runs every enabled recognizer, applies context boosts, validators, the
/// score threshold, overlap resolution and date/time merging. Output is
/// sorted by start and pairwise non-overlapping.
std::vector<EntitySpan> analyze(const std::string& text, const RecognizerSet& recognizers,
                                const AnalyzerConfig& config = {});

nlohmann::json to_json(const EntitySpan& span);
EntitySpan span_from_json(const nlohmann::json& doc);

/// Number of code points in a UTF-8 string.
std::size_t utf8_length(const std::string& s);

/// Substring by code-point offsets.
std::string utf8_substr(const std::string& s, std::size_t start, std::size_t end);

}  // namespace sonoscan
