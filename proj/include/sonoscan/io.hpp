#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace sonoscan::io {

using nlohmann::json;

/// Key of the provenance record written as the first line of every JSONL
/// artifact and as a top-level field of every JSON artifact.
inline constexpr const char* kProvenanceKey = "_provenance";

/// Reads newline-delimited JSON objects. Blank lines and provenance records
/// are skipped. Malformed lines raise DataError naming path and line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

/// Lines of a plain word-list file, trimmed, without blanks or '#' comments.
std::vector<std::string> read_word_list(const std::filesystem::path& path);

json provenance(const std::string& stage, std::uint64_t seed, json params = json::object());

/// Writes to a sibling temporary file and renames it over the target on
/// commit(). If commit() is never reached the temporary is removed, so a
/// failed stage never leaves a truncated output behind.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target, bool binary = false);
  ~AtomicFile();

  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ofstream& stream() { return out_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_json_atomic(const std::filesystem::path& path, const json& doc);

/// One provenance line, then one compact JSON object per line.
void write_jsonl_atomic(const std::filesystem::path& path, const json& header,
                        const std::vector<json>& records);

}  // namespace sonoscan::io
