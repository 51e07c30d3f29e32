#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "sonoscan/cluster.hpp"
#include "sonoscan/io.hpp"
#include "sonoscan/random.hpp"

namespace sonoscan {

PointMatrix to_points(const EmbeddingMatrix& m) {
  PointMatrix points(static_cast<Eigen::Index>(m.count), static_cast<Eigen::Index>(m.dim));
  for (std::size_t i = 0; i < m.count; ++i) {
    const auto row = m.row(i);
    for (std::uint32_t j = 0; j < m.dim; ++j) points(static_cast<Eigen::Index>(i), j) = row[j];
  }
  return points;
}

PcaResult pca_reduce(const PointMatrix& points, int d) {
  const Eigen::Index n = points.rows();
  const Eigen::Index dim = points.cols();
  if (d < 1) throw ConfigError("pca target dimension must be positive");
  if (d >= n) {
    throw DataError("pca needs more points than target dims (" + std::to_string(n) + " <= " +
                    std::to_string(d) + ")");
  }
  if (d > dim) {
    throw DataError("pca target dim " + std::to_string(d) + " exceeds input dim " +
                    std::to_string(dim));
  }

  PcaResult result;
  result.mean = points.colwise().mean();
  const Eigen::MatrixXd centered = points.rowwise() - result.mean;
  const Eigen::MatrixXd covariance =
      (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
  if (solver.info() != Eigen::Success) throw DataError("pca eigen decomposition failed");

  // Eigenvalues come back ascending; take the last d in reverse.
  result.components.resize(d, dim);
  result.explained_variance.resize(d);
  for (int k = 0; k < d; ++k) {
    const Eigen::Index src = dim - 1 - k;
    Eigen::VectorXd axis = solver.eigenvectors().col(src);
    Eigen::Index pivot = 0;
    for (Eigen::Index j = 1; j < dim; ++j) {
      if (std::abs(axis[j]) > std::abs(axis[pivot])) pivot = j;
    }
    if (axis[pivot] < 0) axis = -axis;
    result.components.row(k) = axis.transpose();
    result.explained_variance[k] = std::max(0.0, solver.eigenvalues()[src]);
  }
  result.projected = centered * result.components.transpose();
  return result;
}

// ---------------------------------------------------------------- t-SNE

namespace {

Eigen::MatrixXd squared_distances(const PointMatrix& points) {
  const Eigen::VectorXd norms = points.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * points * points.transpose();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

}  // namespace

Eigen::MatrixXd tsne_affinities(const PointMatrix& points, double perplexity) {
  const Eigen::Index n = points.rows();
  const Eigen::MatrixXd dist = squared_distances(points);
  const double target_entropy = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);

  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double beta_lo = 0.0;
    double beta_hi = std::numeric_limits<double>::infinity();
    // Offsetting by the nearest distance keeps exp() away from underflow.
    double min_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, dist(i, j));
    }
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (dist(i, j) - min_d));
        p(i, j) = w;
        sum += w;
        weighted += w * (dist(i, j) - min_d);
      }
      // H = log(sum) + beta * E[d]
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
      } else {
        beta_hi = beta;
        beta = (beta + beta_lo) / 2.0;
      }
    }
  }
  Eigen::MatrixXd joint = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  return joint.cwiseMax(1e-12);
}

double tsne_kl(const Eigen::MatrixXd& p, const PointMatrix& layout) {
  const Eigen::Index n = layout.rows();
  const Eigen::MatrixXd dist = squared_distances(layout);
  double q_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) q_sum += 1.0 / (1.0 + dist(i, j));
    }
  }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(1e-12, (1.0 / (1.0 + dist(i, j))) / q_sum);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

TsneResult tsne_2d(const PointMatrix& points, const TsneParams& params) {
  const Eigen::Index n = points.rows();
  if (params.perplexity <= 0.0) throw ConfigError("perplexity must be positive");
  if (!(params.perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw DataError("perplexity " + std::to_string(params.perplexity) + " is too large for " +
                    std::to_string(n) + " points (needs perplexity < (n-1)/3)");
  }
  if (params.iterations < 1) throw ConfigError("t-SNE needs at least one iteration");

  const Eigen::MatrixXd p = tsne_affinities(points, params.perplexity);
  Rng rng(params.seed);
  PointMatrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = rng.normal(0.0, 1e-4);
    y(i, 1) = rng.normal(0.0, 1e-4);
  }

  TsneResult result;
  result.initial_kl = tsne_kl(p, y);

  PointMatrix update = PointMatrix::Zero(n, 2);
  PointMatrix gains = PointMatrix::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  PointMatrix grad(n, 2);
  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration =
        iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    const double momentum =
        iter < params.momentum_switch ? params.initial_momentum : params.final_momentum;

    double q_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0);
        const double dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        q_sum += 2.0 * v;
      }
    }
    // dC/dy_i = 4 sum_j (P_ij - Q_ij) (1 + |y_i - y_j|^2)^-1 (y_i - y_j)
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double coeff = (exaggeration * p(i, j) - num(i, j) / q_sum) * num(i, j);
        grad(i, 0) += coeff * (y(i, 0) - y(j, 0));
        grad(i, 1) += coeff * (y(i, 1) - y(j, 1));
      }
    }
    grad *= 4.0;

    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2;
        gains(i, c) = std::max(gains(i, c), 0.01);
        update(i, c) = momentum * update(i, c) - params.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += update(i, c);
      }
    }
    y.rowwise() -= y.colwise().mean();
  }
  result.final_kl = tsne_kl(p, y);
  result.embedding = std::move(y);
  return result;
}

// ---------------------------------------------------------------- themes

std::vector<ThemeSummary> theme_words(const std::map<int, std::vector<std::string>>& captions,
                                      std::size_t top_k, const std::set<std::string>& stopwords) {
  std::vector<ThemeSummary> out;
  for (const auto& [cluster, texts] : captions) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
      std::string token;
      auto flush = [&] {
        if (token.size() >= 3 && !stopwords.contains(token)) ++counts[token];
        token.clear();
      };
      for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
          token += static_cast<char>(std::tolower(c));
        } else {
          flush();
        }
      }
      flush();
    }
    std::vector<WordCount> words;
    words.reserve(counts.size());
    for (auto& [word, count] : counts) words.push_back({word, count});
    std::sort(words.begin(), words.end(), [](const WordCount& a, const WordCount& b) {
      return a.count != b.count ? a.count > b.count : a.word < b.word;
    });
    if (words.size() > top_k) words.resize(top_k);
    out.push_back({cluster, std::move(words), texts.size()});
  }
  std::stable_sort(out.begin(), out.end(), [](const ThemeSummary& a, const ThemeSummary& b) {
    if ((a.cluster_id < 0) != (b.cluster_id < 0)) return b.cluster_id < 0;
    return a.cluster_id < b.cluster_id;
  });
  return out;
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::set<std::string> words;
  for (auto& w : io::read_word_list(path)) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words.insert(w);
  }
  return words;
}

}  // namespace sonoscan
