// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "dppnet/hashing.hpp"
#include "dppnet/tensor.hpp"

namespace dppnet {

/// Fully-connected layer whose M×N weight matrix is never stored: entry
/// (m, n) reads candidate p[ψ(m, n)] with sign ξ(m, n). Only the bias is a
/// trainable parameter of the layer itself.
template <typename T>
struct DynamicLayer {
  HashSpec spec;
  Tensor<T> bias;  // M

  explicit DynamicLayer(const HashSpec& s);
};

template <typename T>
struct DynamicGrads {
  Tensor<T> input;   // δ_i, same shape as f_i
  Tensor<T> p;       // K
  Tensor<T> bias;    // M
};

/// f_o = W_d(p) f_i + b for each row of `input` (B×N, or a single N-vector),
/// streaming over (m, n) in row-major order.
template <typename T>
Tensor<T> dyn_forward(const Tensor<T>& input, std::span<const T> p, const DynamicLayer<T>& layer);

/// δ_i[n] = Σ_m w_mn δ_o[m];  dL/dp_k = Σ_{ψ(m,n)=k} ξ(m,n) f_i[n] δ_o[m];
/// dL/db = Σ_batch δ_o. Accumulation order is row-major over (m, n).
template <typename T>
DynamicGrads<T> dyn_backward(const Tensor<T>& input, std::span<const T> p,
                             const Tensor<T>& delta_out, const DynamicLayer<T>& layer);

inline constexpr std::size_t kMaterializeLimit = std::size_t{1} << 20;

/// Explicit M×N weight matrix. Diagnostic/oracle use only; M·N ≤ 2^20.
template <typename T>
Tensor<T> materialize_weights(std::span<const T> p, const HashSpec& spec);

}  // namespace dppnet
