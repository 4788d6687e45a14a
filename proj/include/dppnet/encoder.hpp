// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dppnet/random.hpp"
#include "dppnet/tensor.hpp"

namespace dppnet {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

// ---------------------------------------------------------------------------
// Word embedding

/// Gathers rows of `table` (V×E) for each token; result is T×E.
template <typename T>
Tensor<T> embed(std::span<const TokenId> tokens, const Tensor<T>& table);

/// Scatters the rows of `dx` (T×E) into `dtable`; repeated tokens sum.
template <typename T>
void embed_backward(std::span<const TokenId> tokens, const Tensor<T>& dx, Tensor<T>& dtable);

// ---------------------------------------------------------------------------
// GRU
//
//   r = σ(W_r x + U_r h)          z = σ(W_z x + U_z h)
//   h̄ = tanh(W_h x + U_h (r ⊙ h))  h' = (1 - z) ⊙ h + z ⊙ h̄
//
// All step functions are batched: x is G×E and h is G×H, one row per sequence.

template <typename T>
struct GruParams {
  Tensor<T> w_r, w_z, w_h;  // H×E
  Tensor<T> u_r, u_z, u_h;  // H×H
  bool has_bias = false;
  Tensor<T> b_r, b_z, b_h;  // H, only when has_bias

  GruParams() = default;
  GruParams(std::size_t hidden, std::size_t input, bool bias = false);

  std::size_t hidden() const { return w_r.rows(); }
  std::size_t input() const { return w_r.cols(); }
  void validate() const;
  void set_zero();
  /// uniform(-a, a) with a = 1/sqrt(fan_in); biases start at zero.
  void init_uniform(Rng& rng);
};

template <typename T>
struct GruStepCache {
  Tensor<T> x, h_prev, r, z, h_bar;
};

template <typename T>
struct GruStepResult {
  Tensor<T> h;
  GruStepCache<T> cache;
};

template <typename T>
GruStepResult<T> gru_step(const Tensor<T>& x, const Tensor<T>& h_prev, const GruParams<T>& params);

template <typename T>
struct GruStepBackward {
  Tensor<T> dx;
  Tensor<T> dh_prev;
};

/// Accumulates parameter gradients into `grads` (same layout as params).
template <typename T>
GruStepBackward<T> gru_step_backward(const Tensor<T>& dh, const GruStepCache<T>& cache,
                                     const GruParams<T>& params, GruParams<T>& grads);

/// True when r, z lie strictly inside (0, 1) and h̄ strictly inside (-1, 1).
template <typename T>
bool gate_ranges_ok(const GruStepCache<T>& cache);

template <typename T>
struct GruEncoding {
  Tensor<T> h_last;  // G×H
  std::vector<GruStepCache<T>> steps;
};

/// Folds gru_step over `inputs` (one G×E tensor per time step) from h_0 = 0.
template <typename T>
GruEncoding<T> gru_encode(const std::vector<Tensor<T>>& inputs, const GruParams<T>& params);

/// Back-propagation through time from dL/dh_T; returns dL/dx_t per step.
template <typename T>
std::vector<Tensor<T>> gru_encode_backward(const Tensor<T>& dh_last, const GruEncoding<T>& enc,
                                           const GruParams<T>& params, GruParams<T>& grads);

// ---------------------------------------------------------------------------
// Candidate projection p = W_p h_T (no bias)

template <typename T>
Tensor<T> predict_candidates(const Tensor<T>& h_last, const Tensor<T>& w_p);

/// Accumulates dW_p and returns dL/dh_T.
template <typename T>
Tensor<T> predict_candidates_backward(const Tensor<T>& dp, const Tensor<T>& h_last,
                                      const Tensor<T>& w_p, Tensor<T>& dw_p);

// ---------------------------------------------------------------------------
// Pre-trained encoder import/export (tensor manifest + blob, vocabulary in
// the manifest metadata).

template <typename T>
struct EncoderWeights {
  std::vector<std::string> vocabulary;  // row i of `embedding` is vocabulary[i]
  Tensor<T> embedding;                  // V×E
  GruParams<T> gru;
};

template <typename T>
void save_encoder(const std::filesystem::path& dir, const EncoderWeights<T>& weights);

/// Loads an exported encoder. A zero `embed_dim`/`hidden_dim` adopts the file's
/// dimensions; otherwise they must match.
template <typename T>
EncoderWeights<T> load_pretrained(const std::filesystem::path& dir, std::size_t embed_dim = 0,
                                  std::size_t hidden_dim = 0);

}  // namespace dppnet
