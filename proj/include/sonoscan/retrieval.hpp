#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sonoscan/embedding_store.hpp"

namespace sonoscan {

enum class DetectionSource { retrieval, classifier };

std::string to_string(DetectionSource source);

struct Detection {
  std::string image_id;
  std::size_t row = 0;
  double score = 0.0;
  DetectionSource source = DetectionSource::retrieval;
  std::optional<std::string> best_query;
};

/// Default thresholds tuned for image queries (0.7) and text queries (0.3).
inline constexpr double kDefaultImageTau = 0.7;
inline constexpr double kDefaultTextTau = 0.3;

struct RetrievalConfig {
  double tau = kDefaultImageTau;
  QueryKind query_kind = QueryKind::image;

  static RetrievalConfig defaults_for(QueryKind kind);
  /// Throws ConfigError unless tau is within [0, 1].
  void validate() const;
};

/// Per-row maximum similarity over all queries; `best` holds the arg-max
/// query index (lowest index on ties).
struct MaxSimilarity {
  std::vector<double> score;
  std::vector<std::size_t> best;
};

MaxSimilarity max_query_similarity(const EmbeddingMatrix& images, const EmbeddingMatrix& queries);

/// Flags every image whose best query similarity is >= tau. Output is
/// ordered by descending score, then ascending row.
std::vector<Detection> retrieve(const std::vector<ImageRecord>& records,
                                const EmbeddingMatrix& images, const QuerySet& queries,
                                const RetrievalConfig& config);

/// Validation accuracy for each tau in the grid (same order as the grid).
std::vector<double> tau_grid_accuracy(const EmbeddingMatrix& val, std::span<const int> labels,
                                      const EmbeddingMatrix& queries,
                                      std::span<const double> grid);

/// Grid tau with the best validation accuracy; ties go to the smaller tau.
double tune_tau(const EmbeddingMatrix& val, std::span<const int> labels,
                const EmbeddingMatrix& queries, std::span<const double> grid);

}  // namespace sonoscan
