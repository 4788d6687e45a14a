// SPDX-License-Identifier: Apache-2.0
#include "dppnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dppnet {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Format: return "format_error";
    case ErrorCode::Config: return "config_error";
    case ErrorCode::Numeric: return "numeric_error";
    case ErrorCode::Internal: return "internal_error";
  }
  return "unknown";
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* precision_name(Precision p) noexcept { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32" || name == "float32") return Precision::F32;
  if (name == "f64" || name == "float64") return Precision::F64;
  fail(ErrorCode::InvalidArgument, "unknown precision '" + name + "' (expected f32 or f64)");
}

AllocationStats& allocation_stats() noexcept {
  thread_local AllocationStats stats;
  return stats;
}

void reset_allocation_peak() noexcept {
  auto& s = allocation_stats();
  s.peak_bytes = s.current_bytes;
  s.total_bytes = 0;
}

void check_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    require(extent > 0, ErrorCode::ShapeMismatch,
            "tensor extents must be positive, got " + shape_to_string(shape));
  }
}

namespace {

std::size_t element_count(const Shape& shape) {
  std::size_t n = shape.empty() ? 0 : 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
  require(t.rank() == 2, ErrorCode::ShapeMismatch,
          std::string(what) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::ShapeMismatch, std::string(op) + ": incompatible shapes " + shape_to_string(a) +
                                     " and " + shape_to_string(b));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::initializer_list<T> values)
    : Tensor(std::move(shape), std::span<const T>(values.begin(), values.size())) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)) {
  check_shape(shape_);
  require(values.size() == element_count(shape_), ErrorCode::ShapeMismatch,
          "tensor data length " + std::to_string(values.size()) + " does not match shape " +
              shape_to_string(shape_));
  data_.assign(values.begin(), values.end());
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::span<const T> values) {
  return Tensor({values.size()}, values);
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
  return out;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    fail(ErrorCode::ShapeMismatch,
         "axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  return shape_[axis];
}

template <typename T>
void Tensor<T>::fill(T value) noexcept {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  check_shape(shape);
  require(element_count(shape) == size(), ErrorCode::ShapeMismatch,
          "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) shape_error(what, a.shape(), b.shape());
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  // i-k-j: each c(i, j) still accumulates over k in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a(i, p);
      const T* brow = &b(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) shape_error("matmul_nt", a.shape(), b.shape());
  return matmul(a, transpose(b));
}

template <typename T>
void matmul_tn_accumulate(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& acc) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) shape_error("matmul_tn", a.shape(), b.shape());
  require(acc.rank() == 2 && acc.rows() == a.cols() && acc.cols() == b.cols(),
          ErrorCode::ShapeMismatch,
          "matmul_tn: accumulator shape " + shape_to_string(acc.shape()) + " does not match");
  const std::size_t rows = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* brow = &b(r, 0);
    for (std::size_t i = 0; i < m; ++i) {
      const T ari = a(r, i);
      T* crow = &acc(i, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += ari * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) shape_error("matmul_tn", a.shape(), b.shape());
  Tensor<T> c({a.cols(), b.cols()});
  matmul_tn_accumulate(a, b, c);
  return c;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  require_same_shape(acc, x, "add");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename T>
void add_row_broadcast(Tensor<T>& x, const Tensor<T>& bias) {
  require(bias.size() == x.cols(), ErrorCode::ShapeMismatch,
          "bias " + shape_to_string(bias.shape()) + " does not match " + shape_to_string(x.shape()));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

template <typename T>
void accumulate_column_sums(const Tensor<T>& x, Tensor<T>& acc) {
  require(acc.size() == x.cols(), ErrorCode::ShapeMismatch,
          "column sum target " + shape_to_string(acc.shape()) + " does not match " +
              shape_to_string(x.shape()));
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) acc[j] += r[j];
  }
}

template <typename T>
Tensor<T> activation_forward(Activation kind, const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.data()) {
    switch (kind) {
      case Activation::Sigmoid:
        v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
        break;
      case Activation::Tanh: v = std::tanh(v); break;
      case Activation::Relu: v = v > T{0} ? v : T{0}; break;
    }
  }
  return y;
}

template <typename T>
Tensor<T> activation_backward(Activation kind, const Tensor<T>& y, const Tensor<T>& dy) {
  require_same_shape(y, dy, "activation_backward");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    switch (kind) {
      case Activation::Sigmoid: dx[i] = dy[i] * y[i] * (T{1} - y[i]); break;
      case Activation::Tanh: dx[i] = dy[i] * (T{1} - y[i] * y[i]); break;
      case Activation::Relu: dx[i] = y[i] > T{0} ? dy[i] : T{0}; break;
    }
  }
  return dx;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank2(logits, "softmax");
  Tensor<T> probs(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = probs.row(i);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum{0};
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (T& v : out) v /= sum;
  }
  return probs;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  require_rank2(logits, "softmax_xent");
  const std::size_t batch = logits.rows(), classes = logits.cols();
  require(targets.size() == batch, ErrorCode::ShapeMismatch,
          "softmax_xent: " + std::to_string(targets.size()) + " targets for batch of " +
              std::to_string(batch));
  for (std::size_t t : targets) {
    require(t < classes, ErrorCode::InvalidArgument,
            "softmax_xent: target index " + std::to_string(t) + " out of range for " +
                std::to_string(classes) + " classes");
  }
  SoftmaxXent<T> out;
  out.probs = softmax_rows(logits);
  out.dlogits = out.probs;
  const T inv_batch = T{1} / static_cast<T>(batch);
  T total{0};
  for (std::size_t i = 0; i < batch; ++i) {
    auto in = logits.row(i);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum{0};
    for (T v : in) sum += std::exp(v - mx);
    total += (std::log(sum) + mx) - in[targets[i]];
    auto d = out.dlogits.row(i);
    d[targets[i]] -= T{1};
    for (T& v : d) v *= inv_batch;
  }
  out.loss = total * inv_batch;
  return out;
}

template <typename T>
BatchNormState<T>::BatchNormState(std::size_t features) {
  if (features == 0) return;
  running_mean = Tensor<T>({features}, T{0});
  running_var = Tensor<T>({features}, T{1});
  gamma = Tensor<T>({features}, T{1});
  beta = Tensor<T>({features}, T{0});
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var,
                            const BatchNormOptions& options, Mode mode, BatchNormCache<T>* cache) {
  require_rank2(x, "batchnorm");
  const std::size_t batch = x.rows(), features = x.cols();
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var}) {
    require(t->size() == features, ErrorCode::ShapeMismatch,
            "batchnorm: parameter " + shape_to_string(t->shape()) + " does not match input " +
                shape_to_string(x.shape()));
  }
  const T eps = static_cast<T>(options.epsilon);
  Tensor<T> mean({features}), inv_std({features});

  if (mode == Mode::Train) {
    require(batch >= 2, ErrorCode::InvalidArgument,
            "batchnorm: train mode needs a batch of at least 2, got " + std::to_string(batch));
    Tensor<T> var({features});
    accumulate_column_sums(x, mean);
    for (T& v : mean.data()) v /= static_cast<T>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < features; ++j) {
        const T d = x(i, j) - mean[j];
        var[j] += d * d;
      }
    }
    for (T& v : var.data()) v /= static_cast<T>(batch);
    const T momentum = static_cast<T>(options.momentum);
    const T unbias = static_cast<T>(batch) / static_cast<T>(batch - 1);
    for (std::size_t j = 0; j < features; ++j) {
      inv_std[j] = T{1} / std::sqrt(var[j] + eps);
      running_mean[j] = (T{1} - momentum) * running_mean[j] + momentum * mean[j];
      running_var[j] = std::max((T{1} - momentum) * running_var[j] + momentum * var[j] * unbias,
                                std::numeric_limits<T>::min());
    }
  } else {
    for (std::size_t j = 0; j < features; ++j) {
      mean[j] = running_mean[j];
      inv_std[j] = T{1} / std::sqrt(running_var[j] + eps);
    }
  }

  Tensor<T> normalized(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < features; ++j) {
      normalized(i, j) = (x(i, j) - mean[j]) * inv_std[j];
      y(i, j) = gamma[j] * normalized(i, j) + beta[j];
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                                     const BatchNormCache<T>& cache) {
  require_same_shape(dy, cache.normalized, "batchnorm_backward");
  const std::size_t batch = dy.rows(), features = dy.cols();
  BatchNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>({features}), Tensor<T>({features})};
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < features; ++j) {
      g.dbeta[j] += dy(i, j);
      g.dgamma[j] += dy(i, j) * cache.normalized(i, j);
    }
  }
  if (cache.mode == Mode::Eval) {
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < features; ++j)
        g.dx(i, j) = dy(i, j) * gamma[j] * cache.inv_std[j];
    return g;
  }
  const T n = static_cast<T>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = 0; j < features; ++j) {
      g.dx(i, j) = gamma[j] * cache.inv_std[j] / n *
                   (n * dy(i, j) - g.dbeta[j] - cache.normalized(i, j) * g.dgamma[j]);
    }
  }
  return g;
}

#define DPPNET_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                     \
  template struct BatchNormState<T>;                                                            \
  template void require_same_shape(const Tensor<T>&, const Tensor<T>&, const char*);            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                             \
  template void matmul_tn_accumulate(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);           \
  template Tensor<T> transpose(const Tensor<T>&);                                               \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);                                      \
  template void add_row_broadcast(Tensor<T>&, const Tensor<T>&);                                \
  template void accumulate_column_sums(const Tensor<T>&, Tensor<T>&);                           \
  template Tensor<T> activation_forward(Activation, const Tensor<T>&);                          \
  template Tensor<T> activation_backward(Activation, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                            \
  template SoftmaxXent<T> softmax_xent(const Tensor<T>&, std::span<const std::size_t>);         \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       Tensor<T>&, Tensor<T>&, const BatchNormOptions&, Mode,   \
                                       BatchNormCache<T>*);                                     \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&,             \
                                                const BatchNormCache<T>&);

DPPNET_INSTANTIATE(float)
DPPNET_INSTANTIATE(double)

}  // namespace dppnet
