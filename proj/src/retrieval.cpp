#include "sonoscan/retrieval.hpp"

#include <algorithm>
#include <limits>

namespace sonoscan {

std::string to_string(DetectionSource source) {
  return source == DetectionSource::retrieval ? "retrieval" : "classifier";
}

RetrievalConfig RetrievalConfig::defaults_for(QueryKind kind) {
  return {kind == QueryKind::text ? kDefaultTextTau : kDefaultImageTau, kind};
}

void RetrievalConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ConfigError("tau must be within [0, 1], got " + std::to_string(tau));
  }
}

MaxSimilarity max_query_similarity(const EmbeddingMatrix& images, const EmbeddingMatrix& queries) {
  if (queries.count == 0) throw ConfigError("query set is empty");
  if (images.dim != queries.dim) {
    throw DataError("images have dim " + std::to_string(images.dim) + ", queries have " +
                    std::to_string(queries.dim));
  }
  MaxSimilarity out;
  out.score.assign(images.count, -std::numeric_limits<double>::infinity());
  out.best.assign(images.count, 0);
  for (std::size_t r = 0; r < images.count; ++r) {
    const auto row = images.row(r);
    for (std::size_t q = 0; q < queries.count; ++q) {
      const double sim = dot(row, queries.row(q));
      if (sim > out.score[r]) {
        out.score[r] = sim;
        out.best[r] = q;
      }
    }
  }
  return out;
}

std::vector<Detection> retrieve(const std::vector<ImageRecord>& records,
                                const EmbeddingMatrix& images, const QuerySet& queries,
                                const RetrievalConfig& config) {
  config.validate();
  if (records.size() != images.count) {
    throw DataError(std::to_string(records.size()) + " metadata records for " +
                    std::to_string(images.count) + " embeddings");
  }
  const auto sims = max_query_similarity(images, queries.embeddings);

  std::vector<ScanHit> hits;
  for (std::size_t r = 0; r < images.count; ++r) {
    if (sims.score[r] >= config.tau) hits.push_back({r, sims.score[r]});
  }
  sort_hits(hits);

  std::vector<Detection> detections;
  detections.reserve(hits.size());
  for (const auto& hit : hits) {
    Detection d;
    d.image_id = records[hit.row].id;
    d.row = hit.row;
    d.score = hit.similarity;
    d.source = DetectionSource::retrieval;
    d.best_query = queries.labels.at(sims.best[hit.row]);
    detections.push_back(std::move(d));
  }
  return detections;
}

std::vector<double> tau_grid_accuracy(const EmbeddingMatrix& val, std::span<const int> labels,
                                      const EmbeddingMatrix& queries,
                                      std::span<const double> grid) {
  if (labels.size() != val.count) throw DataError("label count does not match validation rows");
  if (val.count == 0) throw DataError("validation set is empty");
  const auto sims = max_query_similarity(val, queries);
  std::vector<double> accuracy;
  accuracy.reserve(grid.size());
  for (double tau : grid) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val.count; ++i) {
      const int predicted = sims.score[i] >= tau ? 1 : 0;
      if (predicted == labels[i]) ++correct;
    }
    accuracy.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(val.count));
  }
  return accuracy;
}

double tune_tau(const EmbeddingMatrix& val, std::span<const int> labels,
                const EmbeddingMatrix& queries, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("tau grid is empty");
  const auto accuracy = tau_grid_accuracy(val, labels, queries, grid);
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (accuracy[i] > accuracy[best] || (accuracy[i] == accuracy[best] && grid[i] < grid[best])) {
      best = i;
    }
  }
  return grid[best];
}

}  // namespace sonoscan
