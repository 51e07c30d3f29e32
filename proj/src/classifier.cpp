#include "sonoscan/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sonoscan {

ModelKind model_kind(const Model& model) {
  return static_cast<ModelKind>(model.index() + 1);
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "svm") return ModelKind::svm;
  if (name == "rf") return ModelKind::rf;
  if (name == "mlp") return ModelKind::mlp;
  throw ConfigError("model must be svm, rf or mlp; got '" + name + "'");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::svm: return "svm";
    case ModelKind::rf: return "rf";
    case ModelKind::mlp: return "mlp";
  }
  return "unknown";
}

namespace {

struct ScoreVisitor {
  const EmbeddingMatrix& x;

  std::vector<double> operator()(const LinearSvmModel& m) const {
    std::vector<double> s(x.count);
    for (std::size_t i = 0; i < x.count; ++i) s[i] = m.score(x.row(i));
    return s;
  }
  std::vector<double> operator()(const RandomForestModel& m) const {
    std::vector<double> s(x.count);
    for (std::size_t i = 0; i < x.count; ++i) s[i] = m.vote_fraction(x.row(i)) - 0.5;
    return s;
  }
  std::vector<double> operator()(const MlpModel& m) const {
    if (x.dim != static_cast<std::uint32_t>(m.input_dim())) {
      throw DataError("mlp expects dim " + std::to_string(m.input_dim()) + ", got " +
                      std::to_string(x.dim));
    }
    std::vector<double> s(x.count);
    constexpr std::size_t kBlock = 4096;
    for (std::size_t start = 0; start < x.count; start += kBlock) {
      const std::size_t rows = std::min(kBlock, x.count - start);
      Eigen::Map<const RowMatrix<float>> block(x.data.data() + start * x.dim,
                                               static_cast<Eigen::Index>(rows),
                                               static_cast<Eigen::Index>(x.dim));
      const ColVector<float> z = m.logits(block);
      for (std::size_t i = 0; i < rows; ++i) s[start + i] = z[static_cast<Eigen::Index>(i)];
    }
    return s;
  }
};

}  // namespace

Predictions predict(const Model& model, const EmbeddingMatrix& x) {
  Predictions p;
  p.scores = std::visit(ScoreVisitor{x}, model);
  p.labels.resize(p.scores.size());
  for (std::size_t i = 0; i < p.scores.size(); ++i) p.labels[i] = p.scores[i] >= 0.0 ? 1 : 0;
  return p;
}

EvalReport evaluate(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw DataError("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                    std::to_string(truth.size()) + " labels");
  }
  EvalReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == 1, t = truth[i] == 1;
    if (p && t) ++r.tp;
    else if (p && !t) ++r.fp;
    else if (!p && t) ++r.fn;
    else ++r.tn;
  }
  if (r.fp + r.tn == 0) throw DataError("evaluate: no actual negatives, fp_rate undefined");
  if (r.fn + r.tp == 0) throw DataError("evaluate: no actual positives, fn_rate undefined");
  const double n = static_cast<double>(truth.size());
  r.accuracy = 100.0 * static_cast<double>(r.tp + r.tn) / n;
  r.fp_rate = 100.0 * static_cast<double>(r.fp) / static_cast<double>(r.fp + r.tn);
  r.fn_rate = 100.0 * static_cast<double>(r.fn) / static_cast<double>(r.fn + r.tp);
  return r;
}

LeakageResult leakage_filter(const LabeledSet& pool, const EmbeddingMatrix& holdout,
                             double theta) {
  pool.validate();
  if (holdout.count > 0 && holdout.dim != pool.X.dim) {
    throw DataError("leakage filter: pool dim " + std::to_string(pool.X.dim) +
                    " vs holdout dim " + std::to_string(holdout.dim));
  }
  LeakageResult result;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto row = pool.X.row(i);
    bool leaked = false;
    for (std::size_t h = 0; h < holdout.count && !leaked; ++h) {
      leaked = dot(row, holdout.row(h)) > theta;
    }
    if (leaked) {
      result.removed_rows.push_back(i);
      result.removed_ids.push_back(pool.id(i));
    } else {
      keep.push_back(i);
    }
  }
  result.kept = pool.subset(keep);
  return result;
}

std::vector<HardExample> mine_hard_examples(const Model& model, const LabeledSet& val) {
  val.validate();
  const auto p = predict(model, val.X);
  std::vector<HardExample> hard;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (p.labels[i] != val.y[i]) hard.push_back({i, val.id(i), p.scores[i]});
  }
  std::stable_sort(hard.begin(), hard.end(), [](const HardExample& a, const HardExample& b) {
    return std::abs(a.score) < std::abs(b.score);
  });
  return hard;
}

std::vector<std::size_t> expand_from_seeds(const EmbeddingMatrix& pool,
                                           const EmbeddingMatrix& seeds, std::size_t k,
                                           const std::set<std::size_t>& excluded) {
  if (k == 0 || seeds.count == 0) return {};
  if (pool.dim != seeds.dim) throw DataError("expand_from_seeds: dim mismatch");
  std::vector<ScanHit> candidates;
  for (std::size_t r = 0; r < pool.count; ++r) {
    if (excluded.contains(r)) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < seeds.count; ++s) best = std::max(best, dot(pool.row(r), seeds.row(s)));
    candidates.push_back({r, best});
  }
  sort_hits(candidates);
  if (candidates.size() > k) candidates.resize(k);
  std::vector<std::size_t> rows;
  rows.reserve(candidates.size());
  for (const auto& c : candidates) rows.push_back(c.row);
  return rows;
}

BoundaryBand boundary_band(std::span<const double> scores, double k_sd) {
  if (!(k_sd >= 0.0)) throw ConfigError("k_sd must be non-negative");
  BoundaryBand band;
  double sum = 0.0;
  for (double s : scores) {
    if (s < 0.0) {
      sum += s;
      ++band.negatives;
    }
  }
  if (band.negatives == 0) throw DataError("boundary band: no negative predictions");
  const double mean = sum / static_cast<double>(band.negatives);
  double sq = 0.0;
  for (double s : scores) {
    if (s < 0.0) sq += (s - mean) * (s - mean);
  }
  band.sigma = std::sqrt(sq / static_cast<double>(band.negatives));
  const double lower = -k_sd * band.sigma;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < 0.0 && scores[i] >= lower) band.items.push_back({i, scores[i]});
  }
  std::stable_sort(band.items.begin(), band.items.end(),
                   [](const BandItem& a, const BandItem& b) { return a.score > b.score; });
  return band;
}

BoundaryBand boundary_band(const Model& model, const EmbeddingMatrix& x, double k_sd) {
  const auto p = predict(model, x);
  return boundary_band(p.scores, k_sd);
}

ActiveLearningResult run_active_learning(LabeledSet train, const LabeledSet& val,
                                         const LabeledSet& pool, const EmbeddingMatrix& holdout,
                                         const ActiveLearningConfig& config) {
  // The initial training split gets the same leakage treatment as additions.
  train = leakage_filter(train, holdout, config.leakage_theta).kept;
  std::set<std::size_t> used;

  ActiveLearningResult result;
  double previous = -1.0;
  for (int round = 0; round < config.max_rounds; ++round) {
    auto model = train_svm(train, val, config.svm);
    const auto val_pred = predict(Model{model}, val.X);
    const auto report = evaluate(val_pred.labels, val.y);

    ActiveLearningRound info;
    info.round = round;
    info.train_size = train.size();
    info.val_accuracy = report.accuracy;
    result.model = model;

    const bool stable = previous >= 0.0 && report.accuracy - previous < config.min_improvement;
    const auto hard = mine_hard_examples(Model{model}, val);
    info.hard_examples = hard.size();
    if (stable || hard.empty() || round + 1 == config.max_rounds) {
      result.rounds.push_back(info);
      break;
    }
    previous = report.accuracy;

    std::vector<std::size_t> seed_rows;
    for (const auto& h : hard) seed_rows.push_back(h.row);
    const auto seeds = val.X.select_rows(seed_rows);
    const auto picked = expand_from_seeds(pool.X, seeds, config.expand_k, used);
    if (picked.empty()) {
      result.rounds.push_back(info);
      break;
    }
    used.insert(picked.begin(), picked.end());
    auto filtered = leakage_filter(pool.subset(picked), holdout, config.leakage_theta);
    info.added = filtered.kept.size();
    info.leaked = filtered.removed_rows.size();
    train.append(filtered.kept);
    result.rounds.push_back(info);
  }
  result.train = std::move(train);
  return result;
}

}  // namespace sonoscan
