// SPDX-License-Identifier: Apache-2.0
#include "dppnet/dynamic_layer.hpp"

namespace dppnet {

namespace {

template <typename T>
std::size_t batch_rows(const Tensor<T>& input, const HashSpec& spec, const char* op) {
  const bool single = input.rank() == 1;
  require(input.rank() == 1 || input.rank() == 2, ErrorCode::ShapeMismatch,
          std::string(op) + ": input must be an N-vector or B×N, got " +
              shape_to_string(input.shape()));
  const std::size_t width = single ? input.size() : input.cols();
  require(width == spec.cols, ErrorCode::ShapeMismatch,
          std::string(op) + ": input width " + std::to_string(width) + " != N=" +
              std::to_string(spec.cols));
  return single ? 1 : input.rows();
}

template <typename T>
void check_candidates(std::span<const T> p, const HashSpec& spec, const char* op) {
  require(p.size() == spec.candidates, ErrorCode::ShapeMismatch,
          std::string(op) + ": candidate vector has " + std::to_string(p.size()) +
              " entries, K=" + std::to_string(spec.candidates));
}

}  // namespace

template <typename T>
DynamicLayer<T>::DynamicLayer(const HashSpec& s) : spec(s) {
  spec.validate();
  bias = Tensor<T>({spec.rows});
}

template <typename T>
Tensor<T> dyn_forward(const Tensor<T>& input, std::span<const T> p, const DynamicLayer<T>& layer) {
  const HashSpec& spec = layer.spec;
  const std::size_t batch = batch_rows(input, spec, "dyn_forward");
  check_candidates(p, spec, "dyn_forward");
  require(layer.bias.size() == spec.rows, ErrorCode::ShapeMismatch,
          "dyn_forward: bias length does not match M");
  const std::size_t M = spec.rows, N = spec.cols;

  Tensor<T> out = input.rank() == 1 ? Tensor<T>({M}) : Tensor<T>({batch, M});
  const T* f = input.data().data();
  T* o = out.data().data();
  for (std::uint32_t m = 0; m < M; ++m) {
    for (std::uint32_t n = 0; n < N; ++n) {
      const T w = p[bucket_unchecked(m, n, spec)] * static_cast<T>(sign_unchecked(m, n, spec));
      for (std::size_t b = 0; b < batch; ++b) o[b * M + m] += w * f[b * N + n];
    }
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t m = 0; m < M; ++m) o[b * M + m] += layer.bias[m];
  return out;
}

template <typename T>
DynamicGrads<T> dyn_backward(const Tensor<T>& input, std::span<const T> p,
                             const Tensor<T>& delta_out, const DynamicLayer<T>& layer) {
  const HashSpec& spec = layer.spec;
  const std::size_t batch = batch_rows(input, spec, "dyn_backward");
  check_candidates(p, spec, "dyn_backward");
  const std::size_t M = spec.rows, N = spec.cols;
  require(delta_out.size() == batch * M, ErrorCode::ShapeMismatch,
          "dyn_backward: output gradient " + shape_to_string(delta_out.shape()) +
              " does not match batch " + std::to_string(batch) + " x M=" + std::to_string(M));

  DynamicGrads<T> g{Tensor<T>(input.shape()), Tensor<T>({spec.candidates}), Tensor<T>({spec.rows})};
  const T* f = input.data().data();
  const T* d = delta_out.data().data();
  T* di = g.input.data().data();
  for (std::uint32_t m = 0; m < M; ++m) {
    for (std::uint32_t n = 0; n < N; ++n) {
      const std::uint32_t k = bucket_unchecked(m, n, spec);
      const T sign = static_cast<T>(sign_unchecked(m, n, spec));
      const T w = p[k] * sign;
      T dw{0};  // ∂L/∂w_mn summed over the batch
      for (std::size_t b = 0; b < batch; ++b) {
        const T dom = d[b * M + m];
        di[b * N + n] += w * dom;
        dw += f[b * N + n] * dom;
      }
      g.p[k] += dw * sign;
    }
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t m = 0; m < M; ++m) g.bias[m] += d[b * M + m];
  return g;
}

template <typename T>
Tensor<T> materialize_weights(std::span<const T> p, const HashSpec& spec) {
  spec.validate();
  check_candidates(p, spec, "materialize_weights");
  require(static_cast<std::size_t>(spec.rows) * spec.cols <= kMaterializeLimit,
          ErrorCode::InvalidArgument,
          "materialize_weights: M*N=" + std::to_string(std::size_t{spec.rows} * spec.cols) +
              " exceeds the 2^20 guard");
  Tensor<T> w({spec.rows, spec.cols});
  for (std::uint32_t m = 0; m < spec.rows; ++m)
    for (std::uint32_t n = 0; n < spec.cols; ++n)
      w(m, n) = p[psi(m, n, spec)] * static_cast<T>(xi(m, n, spec));
  return w;
}

template struct DynamicLayer<float>;
template struct DynamicLayer<double>;
template Tensor<float> dyn_forward(const Tensor<float>&, std::span<const float>, const DynamicLayer<float>&);
template Tensor<double> dyn_forward(const Tensor<double>&, std::span<const double>, const DynamicLayer<double>&);
template DynamicGrads<float> dyn_backward(const Tensor<float>&, std::span<const float>,
                                          const Tensor<float>&, const DynamicLayer<float>&);
template DynamicGrads<double> dyn_backward(const Tensor<double>&, std::span<const double>,
                                           const Tensor<double>&, const DynamicLayer<double>&);
template Tensor<float> materialize_weights(std::span<const float>, const HashSpec&);
template Tensor<double> materialize_weights(std::span<const double>, const HashSpec&);

}  // namespace dppnet
