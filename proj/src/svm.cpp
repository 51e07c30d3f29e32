#include "sonoscan/svm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sonoscan/random.hpp"

namespace sonoscan {

double LinearSvmModel::score(std::span<const float> x) const {
  if (x.size() != w.size()) {
    throw DataError("svm expects dim " + std::to_string(w.size()) + ", got " +
                    std::to_string(x.size()));
  }
  return dot(w, x) + static_cast<double>(b);
}

LinearSvmModel fit_svm(const LabeledSet& train, double lambda, int epochs, std::uint64_t seed) {
  require_two_classes(train, "training");
  if (!(lambda > 0.0)) throw ConfigError("svm lambda must be positive");
  if (epochs < 1) throw ConfigError("svm needs at least one epoch");

  const std::size_t n = train.size();
  const std::size_t dim = train.X.dim;
  // Weights live as scale * v so the (1 - eta*lambda) shrink is O(1).
  std::vector<double> v(dim + 1, 0.0);
  double scale = 1.0;
  double sq_norm = 0.0;  // ||scale * v||^2
  const double radius_sq = 1.0 / lambda;

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto x = train.X.row(i);
      const double y = train.y[i] == 1 ? 1.0 : -1.0;

      double margin = v[dim];
      for (std::size_t k = 0; k < dim; ++k) margin += v[k] * x[k];
      margin *= scale * y;

      const double shrink = 1.0 - eta * lambda;
      if (shrink <= 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        scale = 1.0;
        sq_norm = 0.0;
      } else {
        scale *= shrink;
        sq_norm *= shrink * shrink;
      }

      if (margin < 1.0) {
        // v += (eta * y / scale) * [x, 1]; track the norm incrementally.
        const double step = eta * y / scale;
        double dot_vx = v[dim];
        double x_sq = 1.0;
        for (std::size_t k = 0; k < dim; ++k) {
          dot_vx += v[k] * x[k];
          x_sq += static_cast<double>(x[k]) * x[k];
        }
        for (std::size_t k = 0; k < dim; ++k) v[k] += step * x[k];
        v[dim] += step;
        sq_norm += scale * scale * (2.0 * step * dot_vx + step * step * x_sq);
      }

      if (sq_norm > radius_sq) {
        const double factor = std::sqrt(radius_sq / sq_norm);
        scale *= factor;
        sq_norm = radius_sq;
      }
      if (scale < 1e-9) {
        for (double& value : v) value *= scale;
        scale = 1.0;
      }
    }
  }

  LinearSvmModel model;
  model.w.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) model.w[k] = static_cast<float>(scale * v[k]);
  model.b = static_cast<float>(scale * v[dim]);
  model.lambda = static_cast<float>(lambda);
  return model;
}

LinearSvmModel train_svm(const LabeledSet& train, const LabeledSet& val,
                         const SvmTrainConfig& config) {
  require_two_classes(train, "training");
  val.validate();
  if (config.lambda_grid.empty()) throw ConfigError("svm lambda grid is empty");
  if (val.X.dim != train.X.dim) throw DataError("train and validation dims differ");

  LinearSvmModel best;
  double best_accuracy = -1.0;
  double best_lambda = 0.0;
  for (double lambda : config.lambda_grid) {
    auto model = fit_svm(train, lambda, config.epochs, config.seed);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const int label = model.score(val.X.row(i)) >= 0.0 ? 1 : 0;
      if (label == val.y[i]) ++correct;
    }
    const double accuracy = val.size() ? static_cast<double>(correct) / val.size() : 0.0;
    if (accuracy > best_accuracy || (accuracy == best_accuracy && lambda < best_lambda)) {
      best_accuracy = accuracy;
      best_lambda = lambda;
      best = std::move(model);
    }
  }
  return best;
}

}  // namespace sonoscan
