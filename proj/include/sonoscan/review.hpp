#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoscan/pii.hpp"
#include "sonoscan/pii_eval.hpp"

namespace httplib {
class Server;
}

namespace sonoscan {

enum class Verdict { confirm, reject };
enum class ItemStatus { pending, confirmed, rejected };

Verdict parse_verdict(const std::string& s);
std::string to_string(Verdict v);
std::string to_string(ItemStatus s);

struct AnnotationRecord {
  std::string image_id;
  std::string annotator;
  int revision = 1;
  Verdict verdict = Verdict::confirm;
  std::vector<TruthSpan> truth_spans;
  std::string timestamp;  // UTC, ISO 8601; assigned by the service
};

nlohmann::json to_json(const AnnotationRecord& record);
AnnotationRecord annotation_from_json(const nlohmann::json& doc);

struct ReviewItem {
  std::string image_id;
  double score = 0.0;
  std::string source;
  int cluster_label = -1;
  std::string caption;
  std::string ocr_text;
  std::vector<EntitySpan> candidate_spans;
  ItemStatus status = ItemStatus::pending;
};

struct ConsolidatedItem {
  std::string image_id;
  std::optional<Verdict> verdict;  // empty when annotators disagree
  bool flagged = false;
  std::vector<TruthSpan> spans;
  std::vector<std::string> annotators;  // sorted
};

struct Consolidation {
  std::map<std::string, ConsolidatedItem> items;
  std::vector<std::string> flagged;  // sorted
};

/// Keeps the latest revision per (image, annotator). Spans of different
/// annotators that fuzzy-match with the same type collapse into one span
/// holding the longer text; spans from a single annotator are kept as given.
/// Annotators are visited in name order, so log order does not matter.
Consolidation consolidate(const std::vector<AnnotationRecord>& log);

struct RetrainingExport {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  std::vector<std::string> flagged;
};

/// `filter` restricts the export to one verdict.
RetrainingExport export_retraining(const Consolidation& c,
                                   std::optional<Verdict> filter = std::nullopt);

/// Confirmed, unflagged images with their consolidated spans.
std::vector<GroundTruthRecord> export_ground_truth(const Consolidation& c);

/// Append-only JSONL annotation log. Opening replays the file and refuses a
/// corrupt one with the offending line number.
class AnnotationLog {
 public:
  explicit AnnotationLog(std::filesystem::path path);
  ~AnnotationLog();
  AnnotationLog(const AnnotationLog&) = delete;
  AnnotationLog& operator=(const AnnotationLog&) = delete;

  const std::vector<AnnotationRecord>& records() const { return records_; }

  /// Highest revision recorded for (image, annotator); 0 if none.
  int latest_revision(const std::string& image_id, const std::string& annotator) const;

  /// Writes and fsyncs one line before returning.
  void append(const AnnotationRecord& record);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::vector<AnnotationRecord> records_;
  std::map<std::pair<std::string, std::string>, int> latest_;
};

struct ReviewSources {
  std::filesystem::path detections;  // scan output
  std::filesystem::path clusters;    // cluster output (optional)
  std::filesystem::path entities;    // pii output (optional)
  std::filesystem::path metadata;    // dataset metadata for captions (optional)
};

/// Review items in score order (descending, ties by id).
std::vector<ReviewItem> load_review_items(const ReviewSources& sources);

class ReviewService {
 public:
  ReviewService(std::vector<ReviewItem> items, const std::filesystem::path& log_path,
                std::filesystem::path images_dir = {},
                std::map<int, std::vector<std::string>> cluster_themes = {});

  void register_routes(httplib::Server& server);

  nlohmann::json stats() const;
  nlohmann::json queue(const std::string& status, std::size_t limit) const;
  std::optional<nlohmann::json> item(const std::string& image_id) const;

  struct PostResult {
    int http_status;
    nlohmann::json body;
  };
  PostResult post_annotation(const std::string& image_id, const nlohmann::json& body,
                             const std::string& annotator_header);

  nlohmann::json export_retraining_json(std::optional<Verdict> filter) const;
  std::string export_ground_truth_jsonl() const;

 private:
  nlohmann::json item_json(const ReviewItem& item) const;
  ItemStatus status_of(const std::string& image_id) const;

  mutable std::shared_mutex mutex_;
  std::vector<ReviewItem> items_;
  std::map<std::string, std::size_t> index_;
  AnnotationLog log_;
  Consolidation consolidated_;
  std::filesystem::path images_dir_;
  std::map<int, std::vector<std::string>> themes_;
};

/// Reads cluster themes (cluster id -> top words) from a cluster report.
std::map<int, std::vector<std::string>> load_cluster_themes(const std::filesystem::path& clusters);

}  // namespace sonoscan
