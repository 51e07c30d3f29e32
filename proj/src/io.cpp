#include "sonoscan/io.hpp"

#include <unistd.h>

#include <sstream>

#include "sonoscan/error.hpp"

namespace sonoscan::io {

namespace fs = std::filesystem;

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<json> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected a JSON object");
    }
    if (record.contains(kProvenanceKey)) continue;
    records.push_back(std::move(record));
  }
  return records;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> read_word_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open word list " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    words.push_back(line.substr(first, last - first + 1));
  }
  return words;
}

json provenance(const std::string& stage, std::uint64_t seed, json params) {
  return json{{kProvenanceKey,
               {{"tool", "sonoscan"}, {"version", "0.1.0"}, {"stage", stage}, {"seed", seed},
                {"params", std::move(params)}}}};
}

AtomicFile::AtomicFile(fs::path target, bool binary) : target_(std::move(target)) {
  temp_ = target_;
  temp_ += ".tmp." + std::to_string(::getpid());
  if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
  out_.open(temp_, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out_) throw DataError("cannot write " + temp_.string());
}

AtomicFile::~AtomicFile() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    fs::remove(temp_, ec);
  }
}

void AtomicFile::commit() {
  out_.flush();
  if (!out_) throw DataError("write failed for " + target_.string());
  out_.close();
  fs::rename(temp_, target_);
  committed_ = true;
}

void write_json_atomic(const fs::path& path, const json& doc) {
  AtomicFile file(path);
  file.stream() << doc.dump(2) << '\n';
  file.commit();
}

void write_jsonl_atomic(const fs::path& path, const json& header,
                        const std::vector<json>& records) {
  AtomicFile file(path);
  file.stream() << header.dump() << '\n';
  for (const auto& record : records) file.stream() << record.dump() << '\n';
  file.commit();
}

}  // namespace sonoscan::io
