#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoscan/dedup.hpp"
#include "sonoscan/pii.hpp"

namespace sonoscan {

/// Edit distance over code points.
std::size_t levenshtein(const std::string& a, const std::string& b);

/// 2 * LCS(a, b) / (|a| + |b|) over code points; two empty strings give 1.
double lcs_similarity(const std::string& a, const std::string& b);

inline constexpr std::size_t kFuzzyMaxDistance = 2;  // distance must be below this
inline constexpr double kFuzzyMinSimilarity = 0.70;  // similarity must exceed this

bool fuzzy_match(const std::string& a, const std::string& b);

struct TruthSpan {
  std::string entity_type;
  std::string text;

  friend bool operator==(const TruthSpan&, const TruthSpan&) = default;
};

struct GroundTruthRecord {
  std::string image_id;
  std::vector<TruthSpan> spans;
};

using EntitiesByImage = std::map<std::string, std::vector<EntitySpan>>;
using TruthByImage = std::map<std::string, std::vector<TruthSpan>>;

struct TypeScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Fills precision/recall/F1 from the counts. With no detections precision
/// is 1 if there was nothing to find and 0 otherwise; recall likewise with
/// no truth spans. F1 is 0 when P + R = 0.
void finalize(TypeScore& score);

struct DetectionScores {
  std::map<std::string, TypeScore> per_type;  // all four core types
  TypeScore overall;                          // micro-averaged
};

/// Greedy one-to-one matching per image and type: detections in start order
/// each take the first unconsumed truth string they fuzzy-match. Images are
/// those of the truth set; detections for other images are ignored.
DetectionScores score_detections(const EntitiesByImage& detected, const TruthByImage& truth);

struct InstanceCounts {
  std::map<std::string, std::size_t> all;
  std::map<std::string, std::size_t> unique;
  std::size_t total_all = 0;
  std::size_t total_unique = 0;
};

/// "unique" skips images the dedup report removed.
InstanceCounts count_instances(const EntitiesByImage& entities,
                               const std::optional<DupReport>& dups = std::nullopt);

/// Presence bits in the order Name, Location, Phone Number, Date Time.
std::string cooccurrence_code(const std::vector<EntitySpan>& spans);

/// "1101" -> "Name+Location+DateTime"; "0000" -> "None".
std::string code_label(const std::string& code);

struct CooccurrenceReport {
  std::map<std::string, std::size_t> histogram;  // all 16 codes
  std::size_t images = 0;
  double at_least_one = 0.0;
  double more_than_one = 0.0;
  double all_four = 0.0;
};

CooccurrenceReport cooccurrence(const EntitiesByImage& entities);

/// Per-image instance total -> number of images.
std::map<std::size_t, std::size_t> instance_histogram(const EntitiesByImage& entities);

/// Throws DataError for any entity type outside the four core types.
void require_core_types(const EntitiesByImage& entities);
void require_core_types(const TruthByImage& truth);

/// Reads `{image_id, entities: [...]}` records (pii stage output).
EntitiesByImage load_entities(const std::filesystem::path& path);

/// Reads `{image_id, spans: [{entity_type, text}]}` records.
TruthByImage load_ground_truth(const std::filesystem::path& path);

nlohmann::json to_json(const TypeScore& score);

/// Counts, scores (when truth is given) and both histograms in one document.
nlohmann::json evaluation_report(const EntitiesByImage& detected, const TruthByImage* truth,
                                 const std::optional<DupReport>& dups);

}  // namespace sonoscan
