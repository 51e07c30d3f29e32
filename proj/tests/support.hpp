#pragma once

#include <stdlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sonoscan/embedding_store.hpp"
#include "sonoscan/labeled_set.hpp"
#include "sonoscan/random.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string templ = (fs::temp_directory_path() / "sonoscan-test-XXXXXX").string();
    if (::mkdtemp(templ.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline sonoscan::EmbeddingMatrix random_matrix(sonoscan::Rng& rng, std::size_t n, std::uint32_t d) {
  sonoscan::EmbeddingMatrix m(n, d);
  for (auto& x : m.data) x = static_cast<float>(rng.normal());
  return m;
}

inline std::vector<float> unit(std::vector<float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  const double n = std::sqrt(s);
  for (auto& x : v) x = static_cast<float>(x / n);
  return v;
}

inline double naive_dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

// Two Gaussian classes in `dim` dimensions whose means are `gap` noise
// standard deviations apart along an axis fixed by `axis_seed`, so sets
// drawn with different generators share one problem.
inline sonoscan::LabeledSet gaussian_classes(sonoscan::Rng& rng, std::size_t per_class,
                                             std::uint32_t dim, double gap,
                                             std::uint64_t axis_seed = 99) {
  sonoscan::Rng axis_rng(axis_seed);
  std::vector<double> axis(dim);
  double norm = 0.0;
  for (auto& a : axis) {
    a = axis_rng.normal();
    norm += a * a;
  }
  for (auto& a : axis) a /= std::sqrt(norm);
  sonoscan::LabeledSet set;
  set.X = sonoscan::EmbeddingMatrix(2 * per_class, dim);
  set.y.resize(2 * per_class);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i % 2 == 0 ? 1 : 0;
    const double shift = (label == 1 ? 0.5 : -0.5) * gap;
    auto row = set.X.row(i);
    for (std::uint32_t k = 0; k < dim; ++k) row[k] = static_cast<float>(shift * axis[k] + rng.normal());
    set.y[i] = label;
  }
  return set;
}

}  // namespace testing
