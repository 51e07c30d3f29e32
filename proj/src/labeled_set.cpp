#include "sonoscan/labeled_set.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "sonoscan/io.hpp"

namespace sonoscan {

namespace fs = std::filesystem;

std::size_t LabeledSet::positives() const {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
}

bool LabeledSet::has_both_classes() const {
  const auto pos = positives();
  return pos > 0 && pos < y.size();
}

void LabeledSet::validate() const {
  if (y.size() != X.count) {
    throw DataError("labeled set has " + std::to_string(y.size()) + " labels for " +
                    std::to_string(X.count) + " rows");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) {
      throw DataError("label at row " + std::to_string(i) + " is " + std::to_string(y[i]) +
                      ", expected 0 or 1");
    }
  }
  if (!ids.empty() && ids.size() != y.size()) throw DataError("labeled set ids misaligned");
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t>& rows) const {
  LabeledSet out;
  out.X = X.select_rows(rows);
  out.split = split;
  out.y.reserve(rows.size());
  for (auto r : rows) {
    out.y.push_back(y[r]);
    if (!ids.empty()) out.ids.push_back(ids[r]);
  }
  return out;
}

void LabeledSet::append(const LabeledSet& other) {
  if (X.count == 0 && X.dim == 0) X.dim = other.X.dim;
  if (other.X.dim != X.dim) throw DataError("cannot append labeled sets of different dim");
  // Mixed id/no-id sets fall back to row-index ids for the side without.
  if (ids.empty() && !other.ids.empty()) {
    for (std::size_t i = 0; i < size(); ++i) ids.push_back(std::to_string(i));
  }
  const bool keep_ids = !ids.empty();
  const std::size_t offset = size();
  X.data.insert(X.data.end(), other.X.data.begin(), other.X.data.end());
  X.count += other.X.count;
  X.normalized = X.normalized && other.X.normalized;
  y.insert(y.end(), other.y.begin(), other.y.end());
  if (keep_ids) {
    for (std::size_t i = 0; i < other.size(); ++i) {
      ids.push_back(other.ids.empty() ? std::to_string(offset + i) : other.ids[i]);
    }
  }
}

void require_two_classes(const LabeledSet& set, const std::string& what) {
  set.validate();
  if (set.size() == 0) throw DataError(what + " set is empty");
  if (!set.has_both_classes()) throw DataError(what + " set contains a single class");
}

LabeledSet load_labeled_set(const fs::path& embeddings, Split split,
                            const std::optional<fs::path>& labels) {
  LabeledSet set;
  set.split = split;
  set.X = normalize(load_embeddings(embeddings));
  fs::path label_path = labels.value_or(fs::path(embeddings.string() + ".labels"));
  for (const auto& word : io::read_word_list(label_path)) {
    if (word == "0" || word == "1") {
      set.y.push_back(word == "1" ? 1 : 0);
    } else {
      throw DataError(label_path.string() + ": label '" + word + "' is not 0 or 1");
    }
  }
  set.validate();
  return set;
}

void save_labeled_set(const fs::path& embeddings, const LabeledSet& set) {
  set.validate();
  save_embeddings(embeddings, set.X);
  io::AtomicFile labels(fs::path(embeddings.string() + ".labels"));
  for (int label : set.y) labels.stream() << label << '\n';
  labels.commit();
}

LabeledSet labeled_set_from_ids(const EmbeddingMatrix& dataset,
                                const std::vector<ImageRecord>& records,
                                const std::vector<std::string>& positives,
                                const std::vector<std::string>& negatives, Split split) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (const auto& rec : records) row_of.emplace(rec.id, rec.row);
  std::vector<std::size_t> rows;
  LabeledSet out;
  auto take = [&](const std::vector<std::string>& ids, int label) {
    for (const auto& id : ids) {
      auto it = row_of.find(id);
      if (it == row_of.end()) throw DataError("unknown image id " + id);
      rows.push_back(it->second);
      out.y.push_back(label);
      out.ids.push_back(id);
    }
  };
  take(positives, 1);
  take(negatives, 0);
  out.X = dataset.select_rows(rows);
  out.split = split;
  return out;
}

}  // namespace sonoscan
