// SPDX-License-Identifier: Apache-2.0
#include "dppnet/encoder.hpp"

#include <cmath>

#include "dppnet/checkpoint.hpp"

namespace dppnet {

namespace fs = std::filesystem;

template <typename T>
Tensor<T> embed(std::span<const TokenId> tokens, const Tensor<T>& table) {
  require(!tokens.empty(), ErrorCode::InvalidArgument, "embed: empty token sequence");
  require(table.rank() == 2, ErrorCode::ShapeMismatch, "embed: table must be V×E");
  const std::size_t vocab = table.rows(), dim = table.cols();
  Tensor<T> out({tokens.size(), dim});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    require(tokens[t] < vocab, ErrorCode::InvalidArgument,
            "embed: token id " + std::to_string(tokens[t]) + " out of range for vocabulary of " +
                std::to_string(vocab));
    auto src = table.row(tokens[t]);
    auto dst = out.row(t);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

template <typename T>
void embed_backward(std::span<const TokenId> tokens, const Tensor<T>& dx, Tensor<T>& dtable) {
  require(dx.rank() == 2 && dx.rows() == tokens.size() && dx.cols() == dtable.cols(),
          ErrorCode::ShapeMismatch, "embed_backward: gradient shape " + shape_to_string(dx.shape()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    require(tokens[t] < dtable.rows(), ErrorCode::InvalidArgument,
            "embed_backward: token id out of range");
    auto src = dx.row(t);
    auto dst = dtable.row(tokens[t]);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
GruParams<T>::GruParams(std::size_t hidden, std::size_t input, bool bias)
    : w_r({hidden, input}),
      w_z({hidden, input}),
      w_h({hidden, input}),
      u_r({hidden, hidden}),
      u_z({hidden, hidden}),
      u_h({hidden, hidden}),
      has_bias(bias) {
  if (bias) {
    b_r = Tensor<T>({hidden});
    b_z = Tensor<T>({hidden});
    b_h = Tensor<T>({hidden});
  }
}

template <typename T>
void GruParams<T>::validate() const {
  const Shape w{w_r.rows(), w_r.cols()};
  const Shape u{w_r.rows(), w_r.rows()};
  for (const Tensor<T>* t : {&w_r, &w_z, &w_h})
    require(t->shape() == w, ErrorCode::ShapeMismatch,
            "GRU input weights disagree: " + shape_to_string(t->shape()) + " vs " + shape_to_string(w));
  for (const Tensor<T>* t : {&u_r, &u_z, &u_h})
    require(t->shape() == u, ErrorCode::ShapeMismatch,
            "GRU recurrent weights must be " + shape_to_string(u) + ", got " +
                shape_to_string(t->shape()));
  if (has_bias)
    for (const Tensor<T>* t : {&b_r, &b_z, &b_h})
      require(t->size() == w_r.rows(), ErrorCode::ShapeMismatch, "GRU bias length mismatch");
}

template <typename T>
void GruParams<T>::set_zero() {
  for (Tensor<T>* t : {&w_r, &w_z, &w_h, &u_r, &u_z, &u_h}) t->set_zero();
  if (has_bias)
    for (Tensor<T>* t : {&b_r, &b_z, &b_h}) t->set_zero();
}

template <typename T>
void GruParams<T>::init_uniform(Rng& rng) {
  const double aw = 1.0 / std::sqrt(static_cast<double>(input()));
  const double au = 1.0 / std::sqrt(static_cast<double>(hidden()));
  for (Tensor<T>* t : {&w_r, &w_z, &w_h})
    for (T& v : t->data()) v = static_cast<T>(rng.uniform(-aw, aw));
  for (Tensor<T>* t : {&u_r, &u_z, &u_h})
    for (T& v : t->data()) v = static_cast<T>(rng.uniform(-au, au));
  if (has_bias)
    for (Tensor<T>* t : {&b_r, &b_z, &b_h}) t->set_zero();
}

namespace {

template <typename T>
Tensor<T> gate_preactivation(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& h,
                             const Tensor<T>& u, const Tensor<T>* bias) {
  Tensor<T> a = matmul_nt(x, w);
  add_inplace(a, matmul_nt(h, u));
  if (bias) add_row_broadcast(a, *bias);
  return a;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

}  // namespace

template <typename T>
GruStepResult<T> gru_step(const Tensor<T>& x, const Tensor<T>& h_prev, const GruParams<T>& params) {
  require(x.rank() == 2 && x.cols() == params.input(), ErrorCode::ShapeMismatch,
          "gru_step: input " + shape_to_string(x.shape()) + " does not match E=" +
              std::to_string(params.input()));
  require(h_prev.rank() == 2 && h_prev.rows() == x.rows() && h_prev.cols() == params.hidden(),
          ErrorCode::ShapeMismatch,
          "gru_step: hidden state " + shape_to_string(h_prev.shape()) + " does not match");
  const bool b = params.has_bias;
  GruStepResult<T> out;
  auto& c = out.cache;
  c.x = x;
  c.h_prev = h_prev;
  c.r = activation_forward(Activation::Sigmoid,
                           gate_preactivation(x, params.w_r, h_prev, params.u_r, b ? &params.b_r : nullptr));
  c.z = activation_forward(Activation::Sigmoid,
                           gate_preactivation(x, params.w_z, h_prev, params.u_z, b ? &params.b_z : nullptr));
  const Tensor<T> reset_h = hadamard(c.r, h_prev);
  c.h_bar = activation_forward(
      Activation::Tanh, gate_preactivation(x, params.w_h, reset_h, params.u_h, b ? &params.b_h : nullptr));
  out.h = Tensor<T>(h_prev.shape());
  for (std::size_t i = 0; i < out.h.size(); ++i)
    out.h[i] = (T{1} - c.z[i]) * h_prev[i] + c.z[i] * c.h_bar[i];
  return out;
}

template <typename T>
GruStepBackward<T> gru_step_backward(const Tensor<T>& dh, const GruStepCache<T>& c,
                                     const GruParams<T>& params, GruParams<T>& grads) {
  require_same_shape(dh, c.h_prev, "gru_step_backward");
  const std::size_t n = dh.size();
  Tensor<T> dz(dh.shape()), dh_bar(dh.shape());
  GruStepBackward<T> out{Tensor<T>(c.x.shape()), Tensor<T>(dh.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    dz[i] = dh[i] * (c.h_bar[i] - c.h_prev[i]);
    dh_bar[i] = dh[i] * c.z[i];
    out.dh_prev[i] = dh[i] * (T{1} - c.z[i]);
  }

  // candidate
  const Tensor<T> da_h = activation_backward(Activation::Tanh, c.h_bar, dh_bar);
  const Tensor<T> reset_h = hadamard(c.r, c.h_prev);
  matmul_tn_accumulate(da_h, c.x, grads.w_h);
  matmul_tn_accumulate(da_h, reset_h, grads.u_h);
  if (params.has_bias) accumulate_column_sums(da_h, grads.b_h);
  const Tensor<T> d_reset_h = matmul(da_h, params.u_h);
  Tensor<T> dr(dh.shape());
  for (std::size_t i = 0; i < n; ++i) {
    dr[i] = d_reset_h[i] * c.h_prev[i];
    out.dh_prev[i] += d_reset_h[i] * c.r[i];
  }
  add_inplace(out.dx, matmul(da_h, params.w_h));

  // update gate
  const Tensor<T> da_z = activation_backward(Activation::Sigmoid, c.z, dz);
  matmul_tn_accumulate(da_z, c.x, grads.w_z);
  matmul_tn_accumulate(da_z, c.h_prev, grads.u_z);
  if (params.has_bias) accumulate_column_sums(da_z, grads.b_z);
  add_inplace(out.dh_prev, matmul(da_z, params.u_z));
  add_inplace(out.dx, matmul(da_z, params.w_z));

  // reset gate
  const Tensor<T> da_r = activation_backward(Activation::Sigmoid, c.r, dr);
  matmul_tn_accumulate(da_r, c.x, grads.w_r);
  matmul_tn_accumulate(da_r, c.h_prev, grads.u_r);
  if (params.has_bias) accumulate_column_sums(da_r, grads.b_r);
  add_inplace(out.dh_prev, matmul(da_r, params.u_r));
  add_inplace(out.dx, matmul(da_r, params.w_r));
  return out;
}

template <typename T>
bool gate_ranges_ok(const GruStepCache<T>& c) {
  for (T v : c.r.data())
    if (!(v > T{0} && v < T{1})) return false;
  for (T v : c.z.data())
    if (!(v > T{0} && v < T{1})) return false;
  for (T v : c.h_bar.data())
    if (!(v > T{-1} && v < T{1})) return false;
  return true;
}

template <typename T>
GruEncoding<T> gru_encode(const std::vector<Tensor<T>>& inputs, const GruParams<T>& params) {
  require(!inputs.empty(), ErrorCode::InvalidArgument, "gru_encode: empty sequence");
  GruEncoding<T> enc;
  enc.steps.reserve(inputs.size());
  enc.h_last = Tensor<T>({inputs.front().rows(), params.hidden()});
  for (const auto& x : inputs) {
    auto step = gru_step(x, enc.h_last, params);
    enc.h_last = std::move(step.h);
    enc.steps.push_back(std::move(step.cache));
  }
  return enc;
}

template <typename T>
std::vector<Tensor<T>> gru_encode_backward(const Tensor<T>& dh_last, const GruEncoding<T>& enc,
                                           const GruParams<T>& params, GruParams<T>& grads) {
  std::vector<Tensor<T>> dxs(enc.steps.size());
  Tensor<T> dh = dh_last;
  for (std::size_t t = enc.steps.size(); t-- > 0;) {
    auto back = gru_step_backward(dh, enc.steps[t], params, grads);
    dxs[t] = std::move(back.dx);
    dh = std::move(back.dh_prev);
  }
  return dxs;
}

template <typename T>
Tensor<T> predict_candidates(const Tensor<T>& h_last, const Tensor<T>& w_p) {
  return matmul_nt(h_last, w_p);
}

template <typename T>
Tensor<T> predict_candidates_backward(const Tensor<T>& dp, const Tensor<T>& h_last,
                                      const Tensor<T>& w_p, Tensor<T>& dw_p) {
  matmul_tn_accumulate(dp, h_last, dw_p);
  return matmul(dp, w_p);
}

namespace {
constexpr const char* kEncoderKind = "dppnet-encoder";
}

template <typename T>
void save_encoder(const fs::path& dir, const EncoderWeights<T>& w) {
  w.gru.validate();
  require(w.embedding.rank() == 2 && w.embedding.rows() == w.vocabulary.size() &&
              w.embedding.cols() == w.gru.input(),
          ErrorCode::ShapeMismatch, "save_encoder: embedding does not match vocabulary/GRU input");
  const auto dp = ParamRole::DynamicProducing;
  std::vector<TensorEntry<T>> entries = {
      {"embedding", "encoder", dp, false, &w.embedding},
      {"gru.w_r", "encoder", dp, false, &w.gru.w_r}, {"gru.w_z", "encoder", dp, false, &w.gru.w_z},
      {"gru.w_h", "encoder", dp, false, &w.gru.w_h}, {"gru.u_r", "encoder", dp, false, &w.gru.u_r},
      {"gru.u_z", "encoder", dp, false, &w.gru.u_z}, {"gru.u_h", "encoder", dp, false, &w.gru.u_h}};
  if (w.gru.has_bias) {
    entries.push_back({"gru.b_r", "encoder", dp, false, &w.gru.b_r});
    entries.push_back({"gru.b_z", "encoder", dp, false, &w.gru.b_z});
    entries.push_back({"gru.b_h", "encoder", dp, false, &w.gru.b_h});
  }
  nlohmann::json meta = {{"kind", kEncoderKind},
                         {"vocabulary", w.vocabulary},
                         {"embedding_dim", w.gru.input()},
                         {"hidden_dim", w.gru.hidden()},
                         {"gru_bias", w.gru.has_bias}};
  save_tensors(dir, entries, meta);
}

template <typename T>
EncoderWeights<T> load_pretrained(const fs::path& dir, std::size_t embed_dim, std::size_t hidden_dim) {
  const LoadedTensors loaded = load_tensors(dir);
  require(loaded.metadata.value("kind", std::string()) == kEncoderKind, ErrorCode::Format,
          "'" + dir.string() + "' is not an exported encoder");
  EncoderWeights<T> w;
  try {
    w.vocabulary = loaded.metadata.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("encoder vocabulary missing: ") + e.what());
  }
  w.embedding = loaded.at("embedding").as<T>();
  w.gru.w_r = loaded.at("gru.w_r").as<T>();
  w.gru.w_z = loaded.at("gru.w_z").as<T>();
  w.gru.w_h = loaded.at("gru.w_h").as<T>();
  w.gru.u_r = loaded.at("gru.u_r").as<T>();
  w.gru.u_z = loaded.at("gru.u_z").as<T>();
  w.gru.u_h = loaded.at("gru.u_h").as<T>();
  w.gru.has_bias = loaded.find("gru.b_r") != nullptr;
  if (w.gru.has_bias) {
    w.gru.b_r = loaded.at("gru.b_r").as<T>();
    w.gru.b_z = loaded.at("gru.b_z").as<T>();
    w.gru.b_h = loaded.at("gru.b_h").as<T>();
  }
  w.gru.validate();
  require(w.embedding.rows() == w.vocabulary.size(), ErrorCode::Format,
          "encoder embedding has " + std::to_string(w.embedding.rows()) + " rows for " +
              std::to_string(w.vocabulary.size()) + " vocabulary entries");
  require(w.embedding.cols() == w.gru.input(), ErrorCode::Format,
          "encoder embedding width does not match GRU input");
  require(embed_dim == 0 || embed_dim == w.gru.input(), ErrorCode::Config,
          "pretrained encoder embedding dim " + std::to_string(w.gru.input()) +
              " != configured " + std::to_string(embed_dim));
  require(hidden_dim == 0 || hidden_dim == w.gru.hidden(), ErrorCode::Config,
          "pretrained encoder hidden dim " + std::to_string(w.gru.hidden()) + " != configured " +
              std::to_string(hidden_dim));
  return w;
}

#define DPPNET_INSTANTIATE(T)                                                                      \
  template Tensor<T> embed(std::span<const TokenId>, const Tensor<T>&);                            \
  template void embed_backward(std::span<const TokenId>, const Tensor<T>&, Tensor<T>&);            \
  template struct GruParams<T>;                                                                    \
  template GruStepResult<T> gru_step(const Tensor<T>&, const Tensor<T>&, const GruParams<T>&);     \
  template GruStepBackward<T> gru_step_backward(const Tensor<T>&, const GruStepCache<T>&,          \
                                                const GruParams<T>&, GruParams<T>&);               \
  template bool gate_ranges_ok(const GruStepCache<T>&);                                            \
  template GruEncoding<T> gru_encode(const std::vector<Tensor<T>>&, const GruParams<T>&);          \
  template std::vector<Tensor<T>> gru_encode_backward(const Tensor<T>&, const GruEncoding<T>&,     \
                                                      const GruParams<T>&, GruParams<T>&);         \
  template Tensor<T> predict_candidates(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> predict_candidates_backward(const Tensor<T>&, const Tensor<T>&,               \
                                                 const Tensor<T>&, Tensor<T>&);                    \
  template void save_encoder(const fs::path&, const EncoderWeights<T>&);                           \
  template EncoderWeights<T> load_pretrained(const fs::path&, std::size_t, std::size_t);

DPPNET_INSTANTIATE(float)
DPPNET_INSTANTIATE(double)

}  // namespace dppnet
