#pragma once

#include <cstdint>
#include <vector>

#include "sonoscan/labeled_set.hpp"

namespace sonoscan {

/// Linear SVM: score(x) = w.x + b.
struct LinearSvmModel {
  std::vector<float> w;
  float b = 0.0f;
  float lambda = 0.0f;

  double score(std::span<const float> x) const;
};

struct SvmTrainConfig {
  std::vector<double> lambda_grid{1e-5, 1e-4, 1e-3, 1e-2};
  int epochs = 20;
  std::uint64_t seed = 0;
};

/// Pegasos subgradient descent on the L2-regularized hinge loss for a single
/// lambda. The bias rides along as a constant-1 feature, so it is
/// regularized and covered by the 1/sqrt(lambda) projection.
LinearSvmModel fit_svm(const LabeledSet& train, double lambda, int epochs, std::uint64_t seed);

/// Fits every lambda in the grid and keeps the best validation accuracy
/// (ties: smaller lambda).
LinearSvmModel train_svm(const LabeledSet& train, const LabeledSet& val,
                         const SvmTrainConfig& config);

}  // namespace sonoscan
