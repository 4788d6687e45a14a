// SPDX-License-Identifier: Apache-2.0
// Reference computations used as test oracles. Everything here is written
// independently of the library kernels: plain loops, no shared helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dppnet/tensor.hpp"

namespace oracle {

using dppnet::Tensor;

inline Tensor<double> random_tensor(std::mt19937_64& gen, dppnet::Shape shape, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

inline std::size_t random_extent(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

inline Tensor<double> triple_loop_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t rows = a.shape()[0], inner = a.shape()[1], cols = b.shape()[1];
  Tensor<double> out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      long double acc = 0;
      for (std::size_t k = 0; k < inner; ++k) acc += static_cast<long double>(a[i * inner + k]) * b[k * cols + j];
      out[i * cols + j] = static_cast<double>(acc);
    }
  return out;
}

/// Same definition as the library's, restated so tests do not trust it.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint32_t bucket(std::uint32_t m, std::uint32_t n, std::uint64_t seed, std::uint32_t k) {
  return static_cast<std::uint32_t>(splitmix64(((static_cast<std::uint64_t>(m) << 32) | n) ^ seed) % k);
}

inline int sign(std::uint32_t m, std::uint32_t n, std::uint64_t seed) {
  return (splitmix64(((static_cast<std::uint64_t>(m) << 32) | n) ^ seed) & 1) ? -1 : 1;
}

/// Central-difference gradient of `loss` with respect to every scalar of `x`.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& loss,
                                       double eps = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = loss();
    x[i] = saved - eps;
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// ‖a - n‖₂ / max(‖a‖₂, ‖n‖₂). Norm-wise so that finite-difference roundoff
/// on near-zero entries does not dominate.
inline double rel_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Σ w ⊙ y, a scalar loss whose gradient with respect to y is w.
inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dppnet_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
