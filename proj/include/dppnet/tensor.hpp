// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dppnet/error.hpp"

namespace dppnet {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

enum class Precision { F32, F64 };

template <typename T>
constexpr Precision precision_of();
template <>
constexpr Precision precision_of<float>() { return Precision::F32; }
template <>
constexpr Precision precision_of<double>() { return Precision::F64; }

const char* precision_name(Precision p) noexcept;
Precision parse_precision(const std::string& name);

// Allocation accounting for tensor storage. Counters are per thread so tests
// can bracket a single call and read what it allocated.
struct AllocationStats {
  std::size_t current_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t total_bytes = 0;
};

AllocationStats& allocation_stats() noexcept;
void reset_allocation_peak() noexcept;

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto& stats = allocation_stats();
    stats.current_bytes += n * sizeof(T);
    stats.total_bytes += n * sizeof(T);
    if (stats.current_bytes > stats.peak_bytes) stats.peak_bytes = stats.current_bytes;
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    allocation_stats().current_bytes -= n * sizeof(T);
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major array. Extents are strictly positive; a default-constructed
/// tensor is empty and has rank 0.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, CountingAllocator<T>>;

  static constexpr Precision precision = precision_of<T>();

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::initializer_list<T> values);
  Tensor(Shape shape, std::span<const T> values);

  static Tensor vector(std::span<const T> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Shorthand for rank-2 tensors.
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return rank() == 1 ? 1 : dim(1); }

  std::span<T> data() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> data() const noexcept { return {data_.data(), data_.size()}; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[1] + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(T value) noexcept;
  void set_zero() noexcept { fill(T{0}); }
  bool all_finite() const noexcept;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

void check_shape(const Shape& shape);

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what);

// Matrix products. Each output element is summed over the inner extent in
// ascending order so results are bit-reproducible.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a · bᵀ
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
/// aᵀ · b
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
/// acc += aᵀ · b
template <typename T>
void matmul_tn_accumulate(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& acc);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x);
template <typename T>
void add_row_broadcast(Tensor<T>& x, const Tensor<T>& bias);
/// acc[j] += Σ_i x(i, j)
template <typename T>
void accumulate_column_sums(const Tensor<T>& x, Tensor<T>& acc);

enum class Activation { Sigmoid, Tanh, Relu };

template <typename T>
Tensor<T> activation_forward(Activation kind, const Tensor<T>& x);
/// dL/dx from the forward output y and dL/dy.
template <typename T>
Tensor<T> activation_backward(Activation kind, const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

template <typename T>
struct SoftmaxXent {
  T loss{};
  Tensor<T> probs;
  Tensor<T> dlogits;
};

/// Mean cross-entropy over the batch; dlogits = (softmax - onehot) / B.
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const std::size_t> targets);

enum class Mode { Train, Eval };

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Per-feature normalisation statistics plus the affine gain and shift.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormOptions options;

  explicit BatchNormState(std::size_t features = 0);
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Train;
  Tensor<T> normalized;  // x̂, B×D
  Tensor<T> inv_std;     // D
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

/// Train mode normalises with batch statistics (biased variance) and folds the
/// unbiased batch variance into the running estimate; eval mode reads the
/// running statistics only.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var,
                            const BatchNormOptions& options, Mode mode,
                            BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
  return batchnorm_forward(x, state.gamma, state.beta, state.running_mean, state.running_var,
                           state.options, mode, cache);
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                                     const BatchNormCache<T>& cache);

}  // namespace dppnet
