#include "sonoscan/review.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>

#include <httplib.h>

#include "sonoscan/embedding_store.hpp"
#include "sonoscan/error.hpp"
#include "sonoscan/io.hpp"
#include "sonoscan/ocr.hpp"

namespace sonoscan {

namespace fs = std::filesystem;
using nlohmann::json;

Verdict parse_verdict(const std::string& s) {
  if (s == "confirm") return Verdict::confirm;
  if (s == "reject") return Verdict::reject;
  throw DataError("verdict must be 'confirm' or 'reject', got '" + s + "'");
}

std::string to_string(Verdict v) { return v == Verdict::confirm ? "confirm" : "reject"; }

std::string to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::pending: return "pending";
    case ItemStatus::confirmed: return "confirmed";
    case ItemStatus::rejected: return "rejected";
  }
  return "pending";
}

json to_json(const AnnotationRecord& r) {
  json spans = json::array();
  for (const auto& s : r.truth_spans) spans.push_back({{"entity_type", s.entity_type}, {"text", s.text}});
  return {{"image_id", r.image_id},          {"annotator", r.annotator},
          {"revision", r.revision},          {"verdict", to_string(r.verdict)},
          {"truth_spans", std::move(spans)}, {"timestamp", r.timestamp}};
}

AnnotationRecord annotation_from_json(const json& doc) {
  if (!doc.is_object()) throw DataError("annotation must be a JSON object");
  AnnotationRecord r;
  try {
    r.image_id = doc.at("image_id").get<std::string>();
    r.annotator = doc.at("annotator").get<std::string>();
    r.revision = doc.at("revision").get<int>();
    r.verdict = parse_verdict(doc.at("verdict").get<std::string>());
    if (doc.contains("truth_spans")) {
      for (const auto& s : doc["truth_spans"]) {
        r.truth_spans.push_back(
            {s.at("entity_type").get<std::string>(), s.at("text").get<std::string>()});
      }
    }
    r.timestamp = doc.value("timestamp", "");
  } catch (const json::exception& e) {
    throw DataError(std::string("bad annotation record: ") + e.what());
  }
  if (r.annotator.empty()) throw DataError("annotation needs an annotator");
  if (r.revision < 1) throw DataError("annotation revision must start at 1");
  for (const auto& s : r.truth_spans) {
    if (!is_core_entity_type(s.entity_type)) {
      throw DataError("unknown entity type '" + s.entity_type + "' in annotation");
    }
  }
  return r;
}

// ---------------------------------------------------------------- consolidate

Consolidation consolidate(const std::vector<AnnotationRecord>& log) {
  // image -> annotator -> latest record
  std::map<std::string, std::map<std::string, const AnnotationRecord*>> latest;
  for (const auto& r : log) {
    auto& slot = latest[r.image_id][r.annotator];
    if (slot == nullptr || r.revision > slot->revision) slot = &r;
  }

  Consolidation out;
  for (const auto& [image_id, by_annotator] : latest) {
    ConsolidatedItem item;
    item.image_id = image_id;
    std::set<Verdict> verdicts;
    struct Entry {
      TruthSpan span;
      std::set<std::string> contributors;
    };
    std::vector<Entry> entries;
    for (const auto& [annotator, record] : by_annotator) {
      item.annotators.push_back(annotator);
      verdicts.insert(record->verdict);
      for (const auto& span : record->truth_spans) {
        auto match = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) {
          return e.span.entity_type == span.entity_type && !e.contributors.contains(annotator) &&
                 fuzzy_match(e.span.text, span.text);
        });
        if (match == entries.end()) {
          entries.push_back({span, {annotator}});
          continue;
        }
        match->contributors.insert(annotator);
        const auto have = utf8_length(match->span.text), got = utf8_length(span.text);
        if (got > have || (got == have && span.text < match->span.text)) match->span.text = span.text;
      }
    }
    for (auto& e : entries) item.spans.push_back(std::move(e.span));
    if (verdicts.size() == 1) {
      item.verdict = *verdicts.begin();
    } else {
      item.flagged = true;
      out.flagged.push_back(image_id);
    }
    out.items.emplace(image_id, std::move(item));
  }
  return out;
}

RetrainingExport export_retraining(const Consolidation& c, std::optional<Verdict> filter) {
  RetrainingExport out;
  for (const auto& [id, item] : c.items) {
    if (item.flagged) {
      out.flagged.push_back(id);
      continue;
    }
    if (filter && item.verdict != filter) continue;
    (item.verdict == Verdict::confirm ? out.positives : out.negatives).push_back(id);
  }
  return out;
}

std::vector<GroundTruthRecord> export_ground_truth(const Consolidation& c) {
  std::vector<GroundTruthRecord> out;
  for (const auto& [id, item] : c.items) {
    if (!item.flagged && item.verdict == Verdict::confirm) out.push_back({id, item.spans});
  }
  return out;
}

// ---------------------------------------------------------------- log

AnnotationLog::AnnotationLog(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_)) {
    std::ifstream in(path_);
    if (!in) throw DataError("cannot read annotation log " + path_.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      AnnotationRecord r;
      try {
        r = annotation_from_json(json::parse(line));
      } catch (const std::exception& e) {
        throw DataError("corrupt annotation log " + path_.string() + " at line " +
                        std::to_string(line_no) + ": " + e.what());
      }
      const auto key = std::make_pair(r.image_id, r.annotator);
      const int prev = latest_.contains(key) ? latest_[key] : 0;
      if (r.revision <= prev) {
        throw DataError("corrupt annotation log " + path_.string() + " at line " +
                        std::to_string(line_no) + ": revision " + std::to_string(r.revision) +
                        " does not follow " + std::to_string(prev));
      }
      latest_[key] = r.revision;
      records_.push_back(std::move(r));
    }
  } else if (path_.has_parent_path()) {
    fs::create_directories(path_.parent_path());
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw DataError("cannot open annotation log " + path_.string() + ": " + std::strerror(errno));
  }
}

AnnotationLog::~AnnotationLog() {
  if (fd_ >= 0) ::close(fd_);
}

int AnnotationLog::latest_revision(const std::string& image_id,
                                   const std::string& annotator) const {
  const auto it = latest_.find({image_id, annotator});
  return it == latest_.end() ? 0 : it->second;
}

void AnnotationLog::append(const AnnotationRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const auto n = ::write(fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCategory::internal, std::string("annotation log write failed: ") +
                                               std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) {
    throw Error(ErrorCategory::internal,
                std::string("annotation log fsync failed: ") + std::strerror(errno));
  }
  latest_[{record.image_id, record.annotator}] = record.revision;
  records_.push_back(record);
}

// ---------------------------------------------------------------- sources

std::vector<ReviewItem> load_review_items(const ReviewSources& sources) {
  std::map<std::string, ReviewItem> items;
  for (const auto& rec : io::read_jsonl(sources.detections)) {
    ReviewItem item;
    try {
      item.image_id = rec.at("image_id").get<std::string>();
      item.score = rec.at("score").get<double>();
      item.source = rec.value("source", "retrieval");
    } catch (const json::exception& e) {
      throw DataError(sources.detections.string() + ": bad detection record: " + e.what());
    }
    items[item.image_id] = std::move(item);
  }
  if (!sources.metadata.empty()) {
    for (const auto& r : load_metadata(sources.metadata)) {
      const auto it = items.find(r.id);
      if (it == items.end()) continue;
      it->second.caption = r.caption;
      if (r.ocr_text) it->second.ocr_text = *r.ocr_text;
    }
  }
  if (!sources.clusters.empty()) {
    const auto doc = io::read_json(sources.clusters);
    for (const auto& a : doc.at("assignments")) {
      const auto it = items.find(a.at("image_id").get<std::string>());
      if (it != items.end()) it->second.cluster_label = a.at("cluster").get<int>();
    }
  }
  if (!sources.entities.empty()) {
    for (const auto& rec : io::read_jsonl(sources.entities)) {
      const auto it = items.find(rec.at("image_id").get<std::string>());
      if (it == items.end()) continue;
      if (rec.contains("text")) it->second.ocr_text = rec["text"].get<std::string>();
      for (const auto& s : rec.at("entities")) it->second.candidate_spans.push_back(span_from_json(s));
    }
  }
  std::vector<ReviewItem> out;
  out.reserve(items.size());
  for (auto& [id, item] : items) out.push_back(std::move(item));
  std::stable_sort(out.begin(), out.end(),
                   [](const ReviewItem& a, const ReviewItem& b) { return a.score > b.score; });
  return out;
}

std::map<int, std::vector<std::string>> load_cluster_themes(const fs::path& clusters) {
  std::map<int, std::vector<std::string>> themes;
  if (clusters.empty()) return themes;
  const auto doc = io::read_json(clusters);
  if (!doc.contains("themes")) return themes;
  for (const auto& t : doc["themes"]) {
    auto& words = themes[t.at("cluster").get<int>()];
    for (const auto& w : t.at("top_words")) words.push_back(w.at("word").get<std::string>());
  }
  return themes;
}

// ---------------------------------------------------------------- service

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string content_type_for(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".webp") return "image/webp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "application/octet-stream";
}

json error_body(const std::string& message) { return {{"error", message}}; }

}  // namespace

ReviewService::ReviewService(std::vector<ReviewItem> items, const fs::path& log_path,
                             fs::path images_dir, std::map<int, std::vector<std::string>> themes)
    : items_(std::move(items)),
      log_(log_path),
      images_dir_(std::move(images_dir)),
      themes_(std::move(themes)) {
  for (std::size_t k = 0; k < items_.size(); ++k) {
    if (!index_.emplace(items_[k].image_id, k).second) {
      throw DataError("duplicate review item " + items_[k].image_id);
    }
  }
  consolidated_ = consolidate(log_.records());
}

ItemStatus ReviewService::status_of(const std::string& image_id) const {
  const auto it = consolidated_.items.find(image_id);
  if (it == consolidated_.items.end() || !it->second.verdict) return ItemStatus::pending;
  return *it->second.verdict == Verdict::confirm ? ItemStatus::confirmed : ItemStatus::rejected;
}

json ReviewService::item_json(const ReviewItem& item) const {
  json spans = json::array();
  for (const auto& s : item.candidate_spans) spans.push_back(to_json(s));
  json doc = {{"image_id", item.image_id},
              {"score", item.score},
              {"source", item.source},
              {"cluster_label", item.cluster_label},
              {"caption", item.caption},
              {"ocr_text", item.ocr_text},
              {"candidate_spans", std::move(spans)},
              {"status", to_string(status_of(item.image_id))}};
  const auto theme = themes_.find(item.cluster_label);
  doc["cluster_theme"] = theme == themes_.end() ? json::array() : json(theme->second);
  const auto c = consolidated_.items.find(item.image_id);
  doc["flagged"] = c != consolidated_.items.end() && c->second.flagged;
  return doc;
}

json ReviewService::stats() const {
  std::shared_lock lock(mutex_);
  std::size_t pending = 0, confirmed = 0, rejected = 0;
  for (const auto& item : items_) {
    switch (status_of(item.image_id)) {
      case ItemStatus::pending: ++pending; break;
      case ItemStatus::confirmed: ++confirmed; break;
      case ItemStatus::rejected: ++rejected; break;
    }
  }
  std::set<std::string> annotators;
  for (const auto& r : log_.records()) annotators.insert(r.annotator);
  json spans = json::object();
  for (const auto& type : core_entity_types()) spans[type] = 0;
  for (const auto& gt : export_ground_truth(consolidated_)) {
    for (const auto& s : gt.spans) spans[s.entity_type] = spans[s.entity_type].get<int>() + 1;
  }
  return {{"items", items_.size()},
          {"pending", pending},
          {"confirmed", confirmed},
          {"rejected", rejected},
          {"flagged", consolidated_.flagged.size()},
          {"annotated", consolidated_.items.size()},
          {"annotations", log_.records().size()},
          {"annotators", annotators.size()},
          {"truth_spans", std::move(spans)}};
}

json ReviewService::queue(const std::string& status, std::size_t limit) const {
  std::shared_lock lock(mutex_);
  json list = json::array();
  std::size_t total = 0;
  for (const auto& item : items_) {
    if (status != "all" && to_string(status_of(item.image_id)) != status) continue;
    ++total;
    if (list.size() < limit) list.push_back(item_json(item));
  }
  return {{"status", status}, {"total", total}, {"items", std::move(list)}};
}

std::optional<json> ReviewService::item(const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  const auto it = index_.find(image_id);
  if (it == index_.end()) return std::nullopt;
  json doc = item_json(items_[it->second]);
  json annotations = json::array();
  for (const auto& r : log_.records()) {
    if (r.image_id == image_id) annotations.push_back(to_json(r));
  }
  doc["annotations"] = std::move(annotations);
  return doc;
}

ReviewService::PostResult ReviewService::post_annotation(const std::string& image_id,
                                                         const json& body,
                                                         const std::string& annotator_header) {
  if (!body.is_object()) return {400, error_body("body must be a JSON object")};
  json doc = body;
  if (doc.contains("image_id") && doc["image_id"] != image_id) {
    return {400, error_body("image_id in body does not match the URL")};
  }
  doc["image_id"] = image_id;
  if (!doc.contains("annotator") && !annotator_header.empty()) doc["annotator"] = annotator_header;
  doc.erase("timestamp");

  AnnotationRecord record;
  try {
    record = annotation_from_json(doc);
  } catch (const DataError& e) {
    return {400, error_body(e.what())};
  }

  std::unique_lock lock(mutex_);
  if (!index_.contains(image_id)) return {404, error_body("unknown item " + image_id)};
  const int expected = log_.latest_revision(image_id, record.annotator) + 1;
  if (record.revision != expected) {
    return {409, {{"error", "stale revision"}, {"expected_revision", expected}}};
  }
  record.timestamp = utc_now();
  log_.append(record);
  consolidated_ = consolidate(log_.records());
  return {201, to_json(record)};
}

json ReviewService::export_retraining_json(std::optional<Verdict> filter) const {
  std::shared_lock lock(mutex_);
  const auto e = export_retraining(consolidated_, filter);
  return {{"positives", e.positives}, {"negatives", e.negatives}, {"flagged", e.flagged}};
}

std::string ReviewService::export_ground_truth_jsonl() const {
  std::shared_lock lock(mutex_);
  std::string out;
  for (const auto& gt : export_ground_truth(consolidated_)) {
    json spans = json::array();
    for (const auto& s : gt.spans) spans.push_back({{"entity_type", s.entity_type}, {"text", s.text}});
    out += json{{"image_id", gt.image_id}, {"spans", std::move(spans)}}.dump();
    out += '\n';
  }
  return out;
}

void ReviewService::register_routes(httplib::Server& server) {
  auto send_json = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  server.Get("/api/stats", [this, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, stats());
  });

  server.Get("/api/queue", [this, send_json](const httplib::Request& req, httplib::Response& res) {
    const std::string status = req.has_param("status") ? req.get_param_value("status") : "pending";
    if (status != "all" && status != "pending" && status != "confirmed" && status != "rejected") {
      send_json(res, 400, error_body("unknown status '" + status + "'"));
      return;
    }
    std::size_t limit = 50;
    if (req.has_param("limit")) {
      try {
        limit = std::stoul(req.get_param_value("limit"));
      } catch (const std::exception&) {
        send_json(res, 400, error_body("limit must be a non-negative integer"));
        return;
      }
    }
    send_json(res, 200, queue(status, limit));
  });

  server.Get(R"(/api/items/([^/]+))",
             [this, send_json](const httplib::Request& req, httplib::Response& res) {
               const auto doc = item(req.matches[1]);
               if (!doc) {
                 send_json(res, 404, error_body("unknown item " + std::string(req.matches[1])));
                 return;
               }
               send_json(res, 200, *doc);
             });

  server.Post(R"(/api/items/([^/]+)/annotation)",
              [this, send_json](const httplib::Request& req, httplib::Response& res) {
                json body;
                try {
                  body = json::parse(req.body);
                } catch (const json::parse_error& e) {
                  send_json(res, 400, error_body(std::string("invalid JSON: ") + e.what()));
                  return;
                }
                const auto result = post_annotation(req.matches[1], body,
                                                    req.get_header_value("X-Annotator"));
                send_json(res, result.http_status, result.body);
              });

  server.Get("/api/export/retraining",
             [this, send_json](const httplib::Request& req, httplib::Response& res) {
               std::optional<Verdict> filter;
               const std::string v = req.has_param("verdict") ? req.get_param_value("verdict") : "all";
               if (v != "all") {
                 try {
                   filter = parse_verdict(v);
                 } catch (const DataError& e) {
                   send_json(res, 400, error_body(e.what()));
                   return;
                 }
               }
               send_json(res, 200, export_retraining_json(filter));
             });

  server.Get("/api/export/ground_truth", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(export_ground_truth_jsonl(), "application/x-ndjson");
  });

  server.Get(R"(/api/images/([^/]+))",
             [this, send_json](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               {
                 std::shared_lock lock(mutex_);
                 if (!index_.contains(id) || images_dir_.empty()) {
                   send_json(res, 404, error_body("no image for " + id));
                   return;
                 }
               }
               // Only files already present in the directory are served.
               for (const auto& path : list_images(images_dir_)) {
                 if (path.stem().string() != id) continue;
                 res.set_content(io::read_text(path), content_type_for(path));
                 return;
               }
               send_json(res, 404, error_body("no image for " + id));
             });

  server.set_exception_handler(
      [send_json](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          send_json(res, 500, error_body(e.what()));
        } catch (...) {
          send_json(res, 500, error_body("internal error"));
        }
      });
}

}  // namespace sonoscan
