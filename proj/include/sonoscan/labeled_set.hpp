#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sonoscan/embedding_store.hpp"

namespace sonoscan {

enum class Split { train, val, test };

/// Embedding rows with binary labels (1 = target category, 0 = other).
struct LabeledSet {
  EmbeddingMatrix X;
  std::vector<int> y;
  Split split = Split::train;
  std::vector<std::string> ids;  // optional; empty means "row index as id"

  std::size_t size() const { return y.size(); }
  std::string id(std::size_t i) const { return ids.empty() ? std::to_string(i) : ids[i]; }
  std::size_t positives() const;
  bool has_both_classes() const;

  /// Throws DataError when |y| != X.count, a label is not 0/1, or ids are misaligned.
  void validate() const;

  LabeledSet subset(const std::vector<std::size_t>& rows) const;
  void append(const LabeledSet& other);
};

/// Training needs at least one example of each class.
void require_two_classes(const LabeledSet& set, const std::string& what);

/// Loads an EMB1 file plus a labels file holding one 0/1 per line
/// (default: "<embeddings>.labels"). Rows are normalized on load.
LabeledSet load_labeled_set(const std::filesystem::path& embeddings, Split split,
                            const std::optional<std::filesystem::path>& labels = std::nullopt);

void save_labeled_set(const std::filesystem::path& embeddings, const LabeledSet& set);

/// Builds a labeled set from dataset rows named by id, as exported from
/// the review queue: positives get label 1, negatives label 0.
LabeledSet labeled_set_from_ids(const EmbeddingMatrix& dataset,
                                const std::vector<ImageRecord>& records,
                                const std::vector<std::string>& positives,
                                const std::vector<std::string>& negatives, Split split);

}  // namespace sonoscan
