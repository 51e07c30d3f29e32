#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "sonoscan/labeled_set.hpp"

namespace sonoscan {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct DenseLayer {
  RowMatrix<T> weight;  // out x in
  ColVector<T> bias;    // out

  Eigen::Index inputs() const { return weight.cols(); }
  Eigen::Index outputs() const { return weight.rows(); }
};

template <typename T>
struct MlpGradients {
  T loss = 0;
  std::vector<DenseLayer<T>> layers;
};

/// Feed-forward binary classifier: affine layers with ReLU in between and
/// a single logit at the end. Binary cross-entropy is applied to the logit.
template <typename T>
class MlpNetwork {
 public:
  MlpNetwork() = default;

  /// `widths` lists every layer width including input and the final 1,
  /// e.g. {512, 1024, 256, 32, 1}. Weights and biases start uniform in
  /// +-1/sqrt(fan_in).
  MlpNetwork(const std::vector<int>& widths, std::uint64_t seed);

  std::vector<DenseLayer<T>>& layers() { return layers_; }
  const std::vector<DenseLayer<T>>& layers() const { return layers_; }
  std::vector<int> widths() const;
  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().inputs()); }

  /// Logits for each row of `x` (n x input_dim).
  ColVector<T> logits(const RowMatrix<T>& x) const;

  /// Mean BCE-with-logits loss over the batch and its exact gradient.
  MlpGradients<T> loss_and_gradients(const RowMatrix<T>& x, const ColVector<T>& y) const;

  /// Mean BCE-with-logits loss only.
  T loss(const RowMatrix<T>& x, const ColVector<T>& y) const;

  template <typename U>
  MlpNetwork<U> cast() const {
    MlpNetwork<U> out;
    for (const auto& layer : layers_) {
      out.layers().push_back({layer.weight.template cast<U>(), layer.bias.template cast<U>()});
    }
    return out;
  }

 private:
  std::vector<DenseLayer<T>> layers_;
};

using MlpModel = MlpNetwork<float>;

/// Adam with bias-corrected moments. One instance tracks one network.
template <typename T>
class Adam {
 public:
  struct Params {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(const std::vector<DenseLayer<T>>& shape, Params params);

  /// One update: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
  /// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
  void step(std::vector<DenseLayer<T>>& layers, const std::vector<DenseLayer<T>>& grads);

  long steps() const { return t_; }

 private:
  Params params_;
  long t_ = 0;
  std::vector<DenseLayer<T>> m_;
  std::vector<DenseLayer<T>> v_;
};

struct MlpTrainConfig {
  std::vector<int> hidden{1024, 256, 32};
  double learning_rate = 1e-4;
  std::size_t batch_size = 1024;
  int epochs = 50;
  int patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct MlpTrainingLog {
  std::vector<double> train_loss;     // mean loss per epoch
  std::vector<double> val_accuracy;   // percent, per epoch
  std::vector<double> val_loss;       // mean BCE, per epoch
  int best_epoch = -1;
};

/// Minibatch Adam on BCE. Returns the weights from the epoch with the best
/// validation accuracy (earliest on ties); stops after `patience` epochs
/// in which neither validation accuracy nor validation loss improved. A
/// non-finite loss aborts with DataError.
MlpModel train_mlp(const LabeledSet& train, const LabeledSet& val, const MlpTrainConfig& config,
                   MlpTrainingLog* log = nullptr);

/// Copies the matrix into an Eigen row-major float matrix.
RowMatrix<float> to_eigen(const EmbeddingMatrix& m);

extern template class MlpNetwork<float>;
extern template class MlpNetwork<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace sonoscan
