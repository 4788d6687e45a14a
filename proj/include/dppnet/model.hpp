// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppnet/dynamic_layer.hpp"
#include "dppnet/encoder.hpp"
#include "dppnet/param_store.hpp"

namespace dppnet {

/// CONCAT uses the concatenation head; the other three share the DPPnet
/// architecture and differ only in how they are trained.
enum class Variant { Dppnet, CnnFixed, RandGru, Concat };

const char* variant_name(Variant v) noexcept;
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t feature_dim = 0;       // F; adopted from the data when 0
  std::size_t adapter_hidden = 128;  // first adapter layer width
  std::size_t dyn_input = 64;        // N
  std::size_t dyn_output = 64;       // M
  std::size_t candidates = 256;      // K
  std::size_t hidden = 64;           // H = L
  std::size_t embed = 32;            // E
  std::size_t num_answers = 0;       // |Ω|; from the answer space
  std::size_t vocab_size = 0;        // from the vocabulary
  std::size_t concat_hidden = 0;     // CONCAT width; matched to DPPnet when 0
  bool gru_bias = false;
  std::uint64_t seed_psi = kDefaultSeedPsi;
  std::uint64_t seed_xi = kDefaultSeedXi;
  std::uint64_t init_seed = 1;
  Variant variant = Variant::Dppnet;
  BatchNormOptions batchnorm;

  HashSpec hash_spec() const;
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Scalar counts of the two architectures for a config, used to size the
/// CONCAT hidden layer.
std::size_t dppnet_parameter_count(const ModelConfig& c);
std::size_t concat_parameter_count(const ModelConfig& c, std::size_t concat_hidden);
std::size_t matched_concat_hidden(const ModelConfig& c);

template <typename T>
struct Batch {
  Tensor<T> features;                  // B×F
  std::vector<TokenSeq> questions;     // B, each nonempty
  std::vector<std::size_t> targets;    // B, or empty when unlabeled
};

/// Examples are grouped by identical question so the encoder and candidate
/// vector are computed once per distinct question; grouping does not change
/// any result.
struct QuestionGroups {
  std::vector<TokenSeq> unique;             // in order of first appearance
  std::vector<std::size_t> group_of;        // per example
  std::vector<std::vector<std::size_t>> members;
  static QuestionGroups build(const std::vector<TokenSeq>& questions);
};

template <typename T>
struct ForwardCache;

template <typename T>
struct ForwardResult {
  Tensor<T> probs;   // B×|Ω|
  Tensor<T> logits;  // B×|Ω|
};

template <typename T>
struct RetrievalHit {
  std::size_t index = 0;
  T similarity{};
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);
  ~Model();
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }
  bool is_concat() const { return config_.variant == Variant::Concat; }

  ForwardResult<T> forward(const Batch<T>& batch, Mode mode) const;

  /// Mean cross-entropy; in train mode also accumulates gradients into the
  /// parameter store (frozen groups are skipped) and updates running stats.
  /// `predictions`, when given, receives the argmax class of each row.
  T loss_and_backward(const Batch<T>& batch, Mode mode = Mode::Train,
                      std::vector<std::size_t>* predictions = nullptr);
  T loss(const Batch<T>& batch, Mode mode) const;

  /// Argmax of each row; ties go to the lowest class index. When `allowed`
  /// is given, only those classes compete.
  static std::size_t argmax(std::span<const T> probs, const std::vector<std::size_t>* allowed = nullptr);
  std::vector<std::size_t> predict(const Batch<T>& batch) const;

  /// Final GRU states, one row per question.
  Tensor<T> encode_questions(const std::vector<TokenSeq>& questions) const;
  /// Candidate weight vectors p = W_p h_T, one row per question (DPPnet head).
  Tensor<T> candidate_weights(const std::vector<TokenSeq>& questions) const;

  std::vector<RetrievalHit<T>> retrieve_similar(const TokenSeq& query,
                                                const std::vector<TokenSeq>& corpus,
                                                std::size_t top_k) const;

  // Direct access used by pretrained loading and tests.
  Tensor<T>& embedding() { return embedding_; }
  GruParams<T>& gru() { return gru_; }
  const DynamicLayer<T>& dynamic_layer() const;

 private:
  ForwardResult<T> run(const Batch<T>& batch, Mode mode, ForwardCache<T>* cache) const;
  void backward(const Batch<T>& batch, const ForwardCache<T>& cache, const Tensor<T>& dlogits);
  void register_params();
  void initialize();

  ModelConfig config_;
  ParamStore<T> store_;

  Tensor<T> adapter_w1_, adapter_b1_, adapter_w2_, adapter_b2_;
  Tensor<T> embedding_;
  GruParams<T> gru_;
  Tensor<T> w_p_;
  std::optional<DynamicLayer<T>> dyn_;
  Tensor<T> concat_w_, concat_b_;
  Tensor<T> bn_gamma_, bn_beta_;
  Tensor<T> out_w_, out_b_;

  // gradients, same layout
  Tensor<T> g_adapter_w1_, g_adapter_b1_, g_adapter_w2_, g_adapter_b2_;
  Tensor<T> g_embedding_;
  GruParams<T> g_gru_;
  Tensor<T> g_w_p_, g_dyn_bias_;
  Tensor<T> g_concat_w_, g_concat_b_;
  Tensor<T> g_bn_gamma_, g_bn_beta_;
  Tensor<T> g_out_w_, g_out_b_;

  // Running statistics are updated by train-mode forwards issued through the
  // const interface.
  mutable Tensor<T> bn_running_mean_, bn_running_var_;
};

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b);

}  // namespace dppnet
