#include "sonoscan/mlp.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "sonoscan/random.hpp"

namespace sonoscan {

template <typename T>
MlpNetwork<T>::MlpNetwork(const std::vector<int>& widths, std::uint64_t seed) {
  if (widths.size() < 2 || widths.back() != 1) {
    throw ConfigError("mlp widths must run from the input dim down to 1");
  }
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    if (in < 1 || out < 1) throw ConfigError("mlp layer widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer<T> layer{RowMatrix<T>(out, in), ColVector<T>(out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
std::vector<int> MlpNetwork<T>::widths() const {
  std::vector<int> w;
  if (layers_.empty()) return w;
  w.push_back(static_cast<int>(layers_.front().inputs()));
  for (const auto& layer : layers_) w.push_back(static_cast<int>(layer.outputs()));
  return w;
}

template <typename T>
ColVector<T> MlpNetwork<T>::logits(const RowMatrix<T>& x) const {
  if (x.cols() != input_dim()) {
    throw DataError("mlp expects dim " + std::to_string(input_dim()) + ", got " +
                    std::to_string(x.cols()));
  }
  RowMatrix<T> a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    RowMatrix<T> z = a * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    if (l + 1 < layers_.size()) z = z.cwiseMax(T(0));
    a = std::move(z);
  }
  return a.col(0);
}

namespace {

// log(1 + exp(z)) - y z, evaluated without overflow.
template <typename T>
T bce_with_logit(T z, T y) {
  return std::max(z, T(0)) - y * z + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
T sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
T MlpNetwork<T>::loss(const RowMatrix<T>& x, const ColVector<T>& y) const {
  const ColVector<T> z = logits(x);
  T total = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) total += bce_with_logit(z[i], y[i]);
  return total / static_cast<T>(z.size());
}

template <typename T>
MlpGradients<T> MlpNetwork<T>::loss_and_gradients(const RowMatrix<T>& x,
                                                  const ColVector<T>& y) const {
  if (x.cols() != input_dim()) throw DataError("mlp input dim mismatch");
  if (x.rows() != y.size() || x.rows() == 0) throw DataError("mlp batch size mismatch");
  const std::size_t n_layers = layers_.size();

  // activations[0] = input, activations[l+1] = output of layer l (post-ReLU
  // except for the last layer, which holds logits).
  std::vector<RowMatrix<T>> activations;
  activations.reserve(n_layers + 1);
  activations.push_back(x);
  for (std::size_t l = 0; l < n_layers; ++l) {
    RowMatrix<T> z = activations.back() * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    if (l + 1 < n_layers) z = z.cwiseMax(T(0));
    activations.push_back(std::move(z));
  }

  MlpGradients<T> grads;
  grads.layers.resize(n_layers);
  const auto batch = static_cast<T>(x.rows());
  const auto& z = activations.back();
  RowMatrix<T> delta(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    grads.loss += bce_with_logit(z(i, 0), y[i]);
    delta(i, 0) = (sigmoid(z(i, 0)) - y[i]) / batch;
  }
  grads.loss /= batch;

  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& input = activations[l];
    grads.layers[l].weight = delta.transpose() * input;
    grads.layers[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      RowMatrix<T> back = delta * layers_[l].weight;
      // ReLU derivative: pass where the layer output was positive.
      delta = (input.array() > T(0)).select(back, T(0));
    }
  }
  return grads;
}

template <typename T>
Adam<T>::Adam(const std::vector<DenseLayer<T>>& shape, Params params) : params_(params) {
  for (const auto& layer : shape) {
    m_.push_back({RowMatrix<T>::Zero(layer.weight.rows(), layer.weight.cols()),
                  ColVector<T>::Zero(layer.bias.size())});
  }
  v_ = m_;
}

template <typename T>
void Adam<T>::step(std::vector<DenseLayer<T>>& layers, const std::vector<DenseLayer<T>>& grads) {
  ++t_;
  const double b1 = params_.beta1, b2 = params_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto update = [&](T* p, const T* g, T* m, T* v, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            params_.learning_rate * m_hat / (std::sqrt(v_hat) + params_.epsilon));
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight.data(), grads[l].weight.data(), m_[l].weight.data(),
           v_[l].weight.data(), layers[l].weight.size());
    update(layers[l].bias.data(), grads[l].bias.data(), m_[l].bias.data(), v_[l].bias.data(),
           layers[l].bias.size());
  }
}

RowMatrix<float> to_eigen(const EmbeddingMatrix& m) {
  return Eigen::Map<const RowMatrix<float>>(m.data.data(), static_cast<Eigen::Index>(m.count),
                                            static_cast<Eigen::Index>(m.dim));
}

namespace {

double accuracy_percent(const MlpModel& net, const RowMatrix<float>& x, const std::vector<int>& y) {
  if (y.empty()) return 0.0;
  const ColVector<float> z = net.logits(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if ((z[static_cast<Eigen::Index>(i)] >= 0.0f ? 1 : 0) == y[i]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(y.size());
}

}  // namespace

MlpModel train_mlp(const LabeledSet& train, const LabeledSet& val, const MlpTrainConfig& config,
                   MlpTrainingLog* log) {
  require_two_classes(train, "training");
  val.validate();
  if (val.X.dim != train.X.dim) throw DataError("train and validation dims differ");
  if (config.batch_size == 0) throw ConfigError("mlp batch size must be positive");
  if (config.epochs < 1) throw ConfigError("mlp needs at least one epoch");

  std::vector<int> widths{static_cast<int>(train.X.dim)};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);

  Rng rng(config.seed);
  MlpModel net(widths, rng.fork());
  Adam<float> adam(net.layers(), {config.learning_rate, config.beta1, config.beta2, config.epsilon});

  const RowMatrix<float> x_train = to_eigen(train.X);
  const RowMatrix<float> x_val = to_eigen(val.X);
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ColVector<float> y_val(static_cast<Eigen::Index>(val.size()));
  for (std::size_t i = 0; i < val.size(); ++i) y_val[static_cast<Eigen::Index>(i)] = static_cast<float>(val.y[i]);

  MlpModel best = net;
  double best_accuracy = -1.0;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int last_progress = 0;
  MlpTrainingLog local_log;
  RowMatrix<float> xb;
  ColVector<float> yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto rows = static_cast<Eigen::Index>(end - start);
      xb.resize(rows, x_train.cols());
      yb.resize(rows);
      for (std::size_t i = start; i < end; ++i) {
        const auto r = static_cast<Eigen::Index>(i - start);
        xb.row(r) = x_train.row(static_cast<Eigen::Index>(order[i]));
        yb[r] = static_cast<float>(train.y[order[i]]);
      }
      auto grads = net.loss_and_gradients(xb, yb);
      if (!std::isfinite(grads.loss)) {
        throw DataError("mlp loss became non-finite at epoch " + std::to_string(epoch) +
                        ", batch " + std::to_string(batches) + " (lr " +
                        std::to_string(config.learning_rate) + ")");
      }
      adam.step(net.layers(), grads.layers);
      loss_sum += grads.loss;
      ++batches;
    }
    const double accuracy = accuracy_percent(net, x_val, val.y);
    local_log.train_loss.push_back(loss_sum / static_cast<double>(batches));
    local_log.val_accuracy.push_back(accuracy);
    // Accuracy sits flat while the logits are still tiny, so falling
    // validation loss also counts as progress for early stopping.
    const double val_loss = val.size() > 0 ? static_cast<double>(net.loss(x_val, y_val)) : 0.0;
    local_log.val_loss.push_back(val_loss);
    if (val_loss < best_val_loss) {
      best_val_loss = val_loss;
      last_progress = epoch;
    }
    if (accuracy > best_accuracy) {
      best_accuracy = accuracy;
      best_epoch = epoch;
      best = net;
      last_progress = epoch;
    }
    if (epoch - last_progress >= config.patience) break;
  }
  local_log.best_epoch = best_epoch;
  if (log) *log = std::move(local_log);
  return best;
}

template class MlpNetwork<float>;
template class MlpNetwork<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace sonoscan
