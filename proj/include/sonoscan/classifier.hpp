#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sonoscan/forest.hpp"
#include "sonoscan/labeled_set.hpp"
#include "sonoscan/mlp.hpp"
#include "sonoscan/svm.hpp"

namespace sonoscan {

using Model = std::variant<LinearSvmModel, RandomForestModel, MlpModel>;

enum class ModelKind : std::uint32_t { svm = 1, rf = 2, mlp = 3 };

ModelKind model_kind(const Model& model);
ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);

struct Predictions {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Decision score per row: SVM margin w.x+b, forest vote fraction - 0.5,
/// MLP logit. A row is labeled 1 iff its score is >= 0.
Predictions predict(const Model& model, const EmbeddingMatrix& x);

/// Percentages. fp_rate = 100 FP/(FP+TN), fn_rate = 100 FN/(FN+TP).
struct EvalReport {
  double accuracy = 0.0;
  double fp_rate = 0.0;
  double fn_rate = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Throws DataError on length mismatch, or when there are no actual
/// negatives (fp_rate undefined) or no actual positives (fn_rate undefined).
EvalReport evaluate(std::span<const int> predicted, std::span<const int> truth);

struct LeakageResult {
  LabeledSet kept;
  std::vector<std::size_t> removed_rows;
  std::vector<std::string> removed_ids;
};

/// Drops every pool item whose similarity to some holdout row is > theta.
LeakageResult leakage_filter(const LabeledSet& pool, const EmbeddingMatrix& holdout,
                             double theta = 0.95);

struct HardExample {
  std::size_t row;
  std::string id;
  double score;
};

/// Misclassified validation items, least confident (smallest |score|) first.
std::vector<HardExample> mine_hard_examples(const Model& model, const LabeledSet& val);

/// Top-k pool rows by maximum similarity to any seed, skipping `excluded`
/// rows. Ties go to the lower row.
std::vector<std::size_t> expand_from_seeds(const EmbeddingMatrix& pool,
                                           const EmbeddingMatrix& seeds, std::size_t k,
                                           const std::set<std::size_t>& excluded = {});

struct BandItem {
  std::size_t row;
  double score;
};

struct BoundaryBand {
  double sigma = 0.0;           // population S.D. of the negative scores
  std::size_t negatives = 0;
  std::vector<BandItem> items;  // score descending
};

/// Items with -k_sd*sigma <= score < 0, where sigma is taken over the
/// negatively scored items only. Throws DataError without negatives.
BoundaryBand boundary_band(std::span<const double> scores, double k_sd);
BoundaryBand boundary_band(const Model& model, const EmbeddingMatrix& x, double k_sd);

/// Binary model container: "SONM", u32 version, u32 kind, u64 seed, then
/// the kind-specific little-endian payload (see model_io.cpp).
void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t seed);

struct LoadedModel {
  Model model;
  std::uint64_t seed = 0;
};

LoadedModel load_model(const std::filesystem::path& path);

struct ActiveLearningConfig {
  int max_rounds = 5;
  std::size_t expand_k = 50;       // pool items pulled in per round
  double leakage_theta = 0.95;
  double min_improvement = 0.1;    // percent; smaller gains count as "stable"
  SvmTrainConfig svm;
};

struct ActiveLearningRound {
  int round = 0;
  std::size_t train_size = 0;
  double val_accuracy = 0.0;
  std::size_t hard_examples = 0;
  std::size_t added = 0;
  std::size_t leaked = 0;
};

struct ActiveLearningResult {
  LabeledSet train;
  LinearSvmModel model;
  std::vector<ActiveLearningRound> rounds;
};

/// Train, mine validation errors, pull the most similar pool items into
/// training, drop anything too close to the holdout, retrain. Stops when
/// validation accuracy stops improving by min_improvement or the pool runs
/// dry. Pool labels stand in for the human labeling step.
ActiveLearningResult run_active_learning(LabeledSet train, const LabeledSet& val,
                                         const LabeledSet& pool, const EmbeddingMatrix& holdout,
                                         const ActiveLearningConfig& config);

}  // namespace sonoscan
