#include "sonoscan/pii_eval.hpp"

#include <algorithm>
#include <set>

#include "sonoscan/error.hpp"
#include "sonoscan/io.hpp"

namespace sonoscan {

using nlohmann::json;

namespace {

// Malformed sequences decode byte by byte rather than failing.
std::u32string decode_utf8(const std::string& s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = c >= 0xF0 ? 3 : c >= 0xE0 ? 2 : c >= 0xC0 ? 1 : 0;
    if (i + static_cast<std::size_t>(extra) >= s.size()) extra = 0;
    char32_t cp = extra == 0 ? c : c & (0x3F >> extra);
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (!ok) {
      cp = c;
      extra = 0;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

}  // namespace

std::size_t levenshtein(const std::string& a_utf8, const std::string& b_utf8) {
  const auto a = decode_utf8(a_utf8);
  const auto b = decode_utf8(b_utf8);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double lcs_similarity(const std::string& a_utf8, const std::string& b_utf8) {
  const auto a = decode_utf8(a_utf8);
  const auto b = decode_utf8(b_utf8);
  if (a.empty() && b.empty()) return 1.0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return 2.0 * static_cast<double>(prev[b.size()]) / static_cast<double>(a.size() + b.size());
}

bool fuzzy_match(const std::string& a, const std::string& b) {
  return levenshtein(a, b) < kFuzzyMaxDistance || lcs_similarity(a, b) > kFuzzyMinSimilarity;
}

void finalize(TypeScore& s) {
  s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp)
                                : (s.fn == 0 ? 1.0 : 0.0);
  s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn)
                             : (s.fp == 0 ? 1.0 : 0.0);
  const double sum = s.precision + s.recall;
  s.f1 = sum > 0.0 ? 2.0 * s.precision * s.recall / sum : 0.0;
}

void require_core_types(const EntitiesByImage& entities) {
  for (const auto& [id, spans] : entities) {
    for (const auto& s : spans) {
      if (!is_core_entity_type(s.entity_type)) {
        throw DataError("unknown entity type '" + s.entity_type + "' for image " + id);
      }
    }
  }
}

void require_core_types(const TruthByImage& truth) {
  for (const auto& [id, spans] : truth) {
    for (const auto& s : spans) {
      if (!is_core_entity_type(s.entity_type)) {
        throw DataError("unknown entity type '" + s.entity_type + "' in ground truth for " + id);
      }
    }
  }
}

DetectionScores score_detections(const EntitiesByImage& detected, const TruthByImage& truth) {
  require_core_types(detected);
  require_core_types(truth);
  DetectionScores scores;
  for (const auto& type : core_entity_types()) scores.per_type[type] = {};

  static const std::vector<EntitySpan> kNone;
  for (const auto& [image_id, truth_spans] : truth) {
    const auto it = detected.find(image_id);
    const auto& found = it == detected.end() ? kNone : it->second;
    for (const auto& type : core_entity_types()) {
      std::vector<const EntitySpan*> dets;
      for (const auto& d : found) {
        if (d.entity_type == type) dets.push_back(&d);
      }
      std::stable_sort(dets.begin(), dets.end(),
                       [](const EntitySpan* a, const EntitySpan* b) { return a->start < b->start; });
      std::vector<const TruthSpan*> truths;
      for (const auto& t : truth_spans) {
        if (t.entity_type == type) truths.push_back(&t);
      }
      std::vector<bool> consumed(truths.size(), false);
      auto& score = scores.per_type[type];
      for (const auto* d : dets) {
        bool matched = false;
        for (std::size_t k = 0; k < truths.size(); ++k) {
          if (!consumed[k] && fuzzy_match(d->text, truths[k]->text)) {
            consumed[k] = true;
            matched = true;
            break;
          }
        }
        matched ? ++score.tp : ++score.fp;
      }
      score.fn += static_cast<std::size_t>(std::count(consumed.begin(), consumed.end(), false));
    }
  }
  for (auto& [type, score] : scores.per_type) {
    finalize(score);
    scores.overall.tp += score.tp;
    scores.overall.fp += score.fp;
    scores.overall.fn += score.fn;
  }
  finalize(scores.overall);
  return scores;
}

InstanceCounts count_instances(const EntitiesByImage& entities,
                               const std::optional<DupReport>& dups) {
  require_core_types(entities);
  std::set<std::string> removed;
  if (dups) removed.insert(dups->removed.begin(), dups->removed.end());
  InstanceCounts counts;
  for (const auto& type : core_entity_types()) {
    counts.all[type] = 0;
    counts.unique[type] = 0;
  }
  for (const auto& [id, spans] : entities) {
    const bool unique = !removed.contains(id);
    for (const auto& s : spans) {
      ++counts.all[s.entity_type];
      ++counts.total_all;
      if (unique) {
        ++counts.unique[s.entity_type];
        ++counts.total_unique;
      }
    }
  }
  return counts;
}

std::string cooccurrence_code(const std::vector<EntitySpan>& spans) {
  const auto& types = core_entity_types();
  std::string code(types.size(), '0');
  for (const auto& s : spans) {
    const auto it = std::find(types.begin(), types.end(), s.entity_type);
    if (it != types.end()) code[static_cast<std::size_t>(it - types.begin())] = '1';
  }
  return code;
}

std::string code_label(const std::string& code) {
  static const char* kNames[] = {"Name", "Location", "PhoneNumber", "DateTime"};
  std::string label;
  for (std::size_t k = 0; k < code.size() && k < 4; ++k) {
    if (code[k] != '1') continue;
    if (!label.empty()) label += '+';
    label += kNames[k];
  }
  return label.empty() ? "None" : label;
}

CooccurrenceReport cooccurrence(const EntitiesByImage& entities) {
  require_core_types(entities);
  CooccurrenceReport report;
  for (int bits = 0; bits < 16; ++bits) {
    std::string code(4, '0');
    for (int k = 0; k < 4; ++k) {
      if (bits & (8 >> k)) code[static_cast<std::size_t>(k)] = '1';
    }
    report.histogram[code] = 0;
  }
  std::size_t one = 0, many = 0, four = 0;
  for (const auto& [id, spans] : entities) {
    const auto code = cooccurrence_code(spans);
    ++report.histogram[code];
    const auto present = std::count(code.begin(), code.end(), '1');
    if (present >= 1) ++one;
    if (present > 1) ++many;
    if (present == 4) ++four;
  }
  report.images = entities.size();
  if (report.images > 0) {
    const auto n = static_cast<double>(report.images);
    report.at_least_one = static_cast<double>(one) / n;
    report.more_than_one = static_cast<double>(many) / n;
    report.all_four = static_cast<double>(four) / n;
  }
  return report;
}

std::map<std::size_t, std::size_t> instance_histogram(const EntitiesByImage& entities) {
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [id, spans] : entities) ++hist[spans.size()];
  return hist;
}

EntitiesByImage load_entities(const std::filesystem::path& path) {
  EntitiesByImage out;
  for (const auto& rec : io::read_jsonl(path)) {
    try {
      auto& spans = out[rec.at("image_id").get<std::string>()];
      for (const auto& s : rec.at("entities")) spans.push_back(span_from_json(s));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": bad entity record: " + e.what());
    }
  }
  return out;
}

TruthByImage load_ground_truth(const std::filesystem::path& path) {
  TruthByImage out;
  for (const auto& rec : io::read_jsonl(path)) {
    try {
      auto& spans = out[rec.at("image_id").get<std::string>()];
      for (const auto& s : rec.at("spans")) {
        spans.push_back({s.at("entity_type").get<std::string>(), s.at("text").get<std::string>()});
      }
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": bad ground truth record: " + e.what());
    }
  }
  require_core_types(out);
  return out;
}

json to_json(const TypeScore& s) {
  return {{"tp", s.tp},           {"fp", s.fp},         {"fn", s.fn},
          {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

json evaluation_report(const EntitiesByImage& detected, const TruthByImage* truth,
                       const std::optional<DupReport>& dups) {
  json report = json::object();

  const auto counts = count_instances(detected, dups);
  json instances = json::object();
  for (const auto& type : core_entity_types()) {
    instances[type] = {{"all", counts.all.at(type)}, {"unique", counts.unique.at(type)}};
  }
  instances["total"] = {{"all", counts.total_all}, {"unique", counts.total_unique}};
  report["instances"] = std::move(instances);

  if (truth != nullptr) {
    const auto scores = score_detections(detected, *truth);
    json per_type = json::object();
    for (const auto& [type, s] : scores.per_type) per_type[type] = to_json(s);
    report["detection_scores"] = {{"per_type", std::move(per_type)},
                                  {"overall", to_json(scores.overall)}};
  }

  json hist = json::object();
  for (const auto& [n, images] : instance_histogram(detected)) hist[std::to_string(n)] = images;
  report["instance_histogram"] = std::move(hist);

  const auto co = cooccurrence(detected);
  json codes = json::array();
  for (const auto& [code, n] : co.histogram) {
    codes.push_back({{"code", code}, {"label", code_label(code)}, {"images", n}});
  }
  report["cooccurrence"] = {{"bit_order", {"NAME", "LOCATION", "PHONE_NUMBER", "DATE_TIME"}},
                            {"images", co.images},
                            {"codes", std::move(codes)},
                            {"at_least_one", co.at_least_one},
                            {"more_than_one", co.more_than_one},
                            {"all_four", co.all_four}};
  return report;
}

}  // namespace sonoscan
