#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sonoscan/error.hpp"

namespace sonoscan {

/// Dense row-major float32 matrix, one embedding per row.
struct EmbeddingMatrix {
  std::size_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;
  bool normalized = false;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t count, std::uint32_t dim)
      : count(count), dim(dim), data(count * dim, 0.0f) {}
  EmbeddingMatrix(std::size_t count, std::uint32_t dim, std::vector<float> values);

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * dim, dim}; }

  /// Copy of the selected rows, in the given order.
  EmbeddingMatrix select_rows(std::span<const std::size_t> rows) const;
};

/// Raised by load_embeddings; `kind` tells the failure modes apart.
class EmbeddingFormatError : public DataError {
 public:
  enum class Kind { io, bad_magic, bad_header, truncated, non_finite };

  EmbeddingFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Reads an EMB1 file: "EMB1", u64 count, u32 dim, count*dim f32, all little-endian.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix);

/// Scales every row to unit L2 norm. A zero-norm row is an error naming the row.
EmbeddingMatrix normalize(EmbeddingMatrix matrix);

/// Dot product accumulated in double.
double dot(std::span<const float> a, std::span<const float> b);

struct ScanHit {
  std::size_t row;
  double similarity;

  friend bool operator==(const ScanHit&, const ScanHit&) = default;
};

struct ScanOptions {
  std::size_t chunk_rows = 4096;
  unsigned workers = 1;
};

/// Every row whose cosine similarity with `query` is >= threshold, by
/// descending similarity then ascending row. The matrix is visited in
/// chunks of `chunk_rows`; the result does not depend on chunking or workers.
std::vector<ScanHit> cosine_scan(const EmbeddingMatrix& matrix, std::span<const float> query,
                                 double threshold, const ScanOptions& options = {});

/// Descending similarity, then ascending row.
void sort_hits(std::vector<ScanHit>& hits);

struct ImageRecord {
  std::string id;
  std::string url;
  std::string caption;
  std::optional<std::string> ocr_text;
  std::size_t row = 0;
};

/// JSON Lines, one object per image with id, url, caption and optional
/// ocr_text. Line order defines the row index.
std::vector<ImageRecord> load_metadata(const std::filesystem::path& path);

/// Throws DataError on duplicate ids or rows outside the matrix.
void validate_records(const std::vector<ImageRecord>& records, const EmbeddingMatrix& matrix);

enum class QueryKind { text, image };

QueryKind parse_query_kind(const std::string& name);
std::string to_string(QueryKind kind);

struct QuerySet {
  QueryKind kind = QueryKind::image;
  EmbeddingMatrix embeddings;
  std::vector<std::string> labels;
};

/// Loads and normalizes query embeddings. Labels come from a text file with
/// one label per line; without one they default to "q0", "q1", ...
QuerySet load_query_set(const std::filesystem::path& embeddings, QueryKind kind,
                        const std::optional<std::filesystem::path>& labels = std::nullopt);

}  // namespace sonoscan
