#pragma once

#include "dgsd/common.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace testing {

using dgsd::MatrixXd;
using dgsd::VectorXd;

/// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dgsd") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Non-negative symmetric weights with a zero diagonal; each edge present
/// with probability `density`.
inline MatrixXd random_adjacency(int n, std::mt19937_64& rng, double density = 0.7) {
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  std::bernoulli_distribution edge(density);
  MatrixXd w = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (edge(rng)) w(i, j) = w(j, i) = weight(rng);
    }
  }
  // Never empty, so lambda_max > 0.
  if (n > 1 && w.isZero(0.0)) w(0, 1) = w(1, 0) = weight(rng);
  return w;
}

inline MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                              double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// O(L^2) discrete Fourier transform.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) /
                           static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

/// Real part of the O(L^2) inverse transform.
inline std::vector<double> naive_idft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::complex<double> acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k * t % n) /
                           static_cast<double>(n);
      acc += x[k] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[t] = acc.real() / static_cast<double>(n);
  }
  return out;
}

inline double max_abs_diff(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace testing
