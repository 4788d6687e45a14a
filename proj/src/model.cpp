// SPDX-License-Identifier: Apache-2.0
#include "dppnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dppnet/random.hpp"

namespace dppnet {

using nlohmann::json;

const char* variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::Dppnet: return "dppnet";
    case Variant::CnnFixed: return "cnn-fixed";
    case Variant::RandGru: return "rand-gru";
    case Variant::Concat: return "concat";
  }
  return "dppnet";
}

Variant parse_variant(const std::string& name) {
  if (name == "dppnet") return Variant::Dppnet;
  if (name == "cnn-fixed") return Variant::CnnFixed;
  if (name == "rand-gru") return Variant::RandGru;
  if (name == "concat") return Variant::Concat;
  fail(ErrorCode::InvalidArgument,
       "unknown variant '" + name + "' (expected dppnet, concat, cnn-fixed or rand-gru)");
}

HashSpec ModelConfig::hash_spec() const {
  HashSpec s;
  s.rows = static_cast<std::uint32_t>(dyn_output);
  s.cols = static_cast<std::uint32_t>(dyn_input);
  s.candidates = static_cast<std::uint32_t>(candidates);
  s.seed_psi = seed_psi;
  s.seed_xi = seed_xi;
  return s;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    require(v >= 1, ErrorCode::Config, std::string("model config: ") + name + " must be >= 1");
  };
  positive(feature_dim, "feature_dim");
  positive(adapter_hidden, "adapter_hidden");
  positive(dyn_input, "dyn_input");
  positive(dyn_output, "dyn_output");
  positive(candidates, "candidates");
  positive(hidden, "hidden");
  positive(embed, "embed");
  positive(num_answers, "num_answers");
  positive(vocab_size, "vocab_size");
  hash_spec().validate();
}

json to_json(const ModelConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"adapter_hidden", c.adapter_hidden},
          {"dyn_input", c.dyn_input},
          {"dyn_output", c.dyn_output},
          {"candidates", c.candidates},
          {"hidden", c.hidden},
          {"embed", c.embed},
          {"num_answers", c.num_answers},
          {"vocab_size", c.vocab_size},
          {"concat_hidden", c.concat_hidden},
          {"gru_bias", c.gru_bias},
          {"seed_psi", c.seed_psi},
          {"seed_xi", c.seed_xi},
          {"init_seed", c.init_seed},
          {"variant", variant_name(c.variant)},
          {"bn_momentum", c.batchnorm.momentum},
          {"bn_epsilon", c.batchnorm.epsilon}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.adapter_hidden = j.value("adapter_hidden", c.adapter_hidden);
    c.dyn_input = j.value("dyn_input", c.dyn_input);
    c.dyn_output = j.value("dyn_output", c.dyn_output);
    c.candidates = j.value("candidates", c.candidates);
    c.hidden = j.value("hidden", c.hidden);
    c.embed = j.value("embed", c.embed);
    c.num_answers = j.value("num_answers", c.num_answers);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.concat_hidden = j.value("concat_hidden", c.concat_hidden);
    c.gru_bias = j.value("gru_bias", c.gru_bias);
    c.seed_psi = j.value("seed_psi", c.seed_psi);
    c.seed_xi = j.value("seed_xi", c.seed_xi);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.variant = parse_variant(j.value("variant", std::string(variant_name(c.variant))));
    c.batchnorm.momentum = j.value("bn_momentum", c.batchnorm.momentum);
    c.batchnorm.epsilon = j.value("bn_epsilon", c.batchnorm.epsilon);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed model config: ") + e.what());
  }
  return c;
}

namespace {

std::size_t shared_parameter_count(const ModelConfig& c) {
  const std::size_t adapter =
      c.adapter_hidden * c.feature_dim + c.adapter_hidden + c.dyn_input * c.adapter_hidden + c.dyn_input;
  const std::size_t gru_bias = c.gru_bias ? 3 * c.hidden : 0;
  const std::size_t encoder =
      c.vocab_size * c.embed + 3 * c.hidden * c.embed + 3 * c.hidden * c.hidden + gru_bias;
  return adapter + encoder;
}

}  // namespace

std::size_t dppnet_parameter_count(const ModelConfig& c) {
  const std::size_t m = c.dyn_output;
  return shared_parameter_count(c) + c.candidates * c.hidden + m  // W_p, dynamic bias
         + 2 * m                                                  // bn gain/shift
         + c.num_answers * m + c.num_answers;                     // classifier
}

std::size_t concat_parameter_count(const ModelConfig& c, std::size_t d) {
  return shared_parameter_count(c) + d * (c.dyn_input + c.hidden) + d + 2 * d +
         c.num_answers * d + c.num_answers;
}

std::size_t matched_concat_hidden(const ModelConfig& c) {
  const double head = static_cast<double>(c.candidates * c.hidden + 3 * c.dyn_output +
                                          c.num_answers * c.dyn_output);
  const double per_unit = static_cast<double>(c.dyn_input + c.hidden + 3 + c.num_answers);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(head / per_unit)));
}

QuestionGroups QuestionGroups::build(const std::vector<TokenSeq>& questions) {
  QuestionGroups g;
  std::map<TokenSeq, std::size_t> seen;
  g.group_of.reserve(questions.size());
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto [it, inserted] = seen.emplace(questions[i], g.unique.size());
    if (inserted) {
      g.unique.push_back(questions[i]);
      g.members.emplace_back();
    }
    g.group_of.push_back(it->second);
    g.members[it->second].push_back(i);
  }
  return g;
}

template <typename T>
struct ForwardCache {
  struct LengthBucket {
    std::vector<std::size_t> groups;  // rows of h_last, in order
    GruEncoding<T> encoding;
  };
  QuestionGroups groups;
  Tensor<T> adapter_hidden;  // B×A, post-relu
  Tensor<T> f_in;            // B×N, post-relu
  std::vector<LengthBucket> buckets;
  Tensor<T> h_last;          // U×H
  Tensor<T> p;               // U×K
  Tensor<T> concat_in;       // B×(N+H)
  BatchNormCache<T> bn;
  Tensor<T> hidden;          // B×M (or B×D), post-relu
};

namespace {

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul_nt(x, w);
  add_row_broadcast(y, b);
  return y;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  Tensor<T> out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
void scatter_rows(const Tensor<T>& src, const std::vector<std::size_t>& rows, Tensor<T>& dst) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto s = src.row(i);
    auto d = dst.row(rows[i]);
    for (std::size_t j = 0; j < s.size(); ++j) d[j] += s[j];
  }
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double a) {
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-a, a));
}

/// Encodes distinct questions batched by length; rows of the result follow
/// the order of `questions`.
template <typename T>
Tensor<T> encode_unique(const std::vector<TokenSeq>& questions, const Tensor<T>& embedding,
                        const GruParams<T>& gru,
                        std::vector<typename ForwardCache<T>::LengthBucket>* buckets) {
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t u = 0; u < questions.size(); ++u) {
    require(!questions[u].empty(), ErrorCode::InvalidArgument,
            "empty question: every question needs at least one known or <unk> token");
    by_length[questions[u].size()].push_back(u);
  }
  Tensor<T> h_last({questions.size(), gru.hidden()});
  for (auto& [length, members] : by_length) {
    std::vector<Tensor<T>> inputs;
    inputs.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
      Tensor<T> x({members.size(), embedding.cols()});
      for (std::size_t g = 0; g < members.size(); ++g) {
        const TokenId tok = questions[members[g]][t];
        if (tok >= embedding.rows())
          fail(ErrorCode::InvalidArgument, "token id " + std::to_string(tok) +
                                               " out of range for vocabulary of " +
                                               std::to_string(embedding.rows()));
        auto src = embedding.row(tok);
        std::copy(src.begin(), src.end(), x.row(g).begin());
      }
      inputs.push_back(std::move(x));
    }
    GruEncoding<T> enc = gru_encode(inputs, gru);
    for (std::size_t g = 0; g < members.size(); ++g) {
      auto src = enc.h_last.row(g);
      std::copy(src.begin(), src.end(), h_last.row(members[g]).begin());
    }
    if (buckets) buckets->push_back({members, std::move(enc)});
  }
  return h_last;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  if (config_.variant == Variant::Concat && config_.concat_hidden == 0)
    config_.concat_hidden = matched_concat_hidden(config_);
  config_.validate();
  register_params();
  initialize();
}

template <typename T>
Model<T>::~Model() = default;

template <typename T>
void Model<T>::register_params() {
  const auto& c = config_;
  const auto S = ParamRole::Static;
  const auto D = ParamRole::DynamicProducing;
  auto add = [this](const std::string& name, const std::string& group, ParamRole role,
                    Tensor<T>& value, Tensor<T>& grad, Shape shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(shape);
    store_.add(name, group, role, value, &grad);
  };

  add("adapter.w1", "adapter", S, adapter_w1_, g_adapter_w1_, {c.adapter_hidden, c.feature_dim});
  add("adapter.b1", "adapter", S, adapter_b1_, g_adapter_b1_, {c.adapter_hidden});
  add("adapter.w2", "adapter", S, adapter_w2_, g_adapter_w2_, {c.dyn_input, c.adapter_hidden});
  add("adapter.b2", "adapter", S, adapter_b2_, g_adapter_b2_, {c.dyn_input});

  add("embedding", "encoder", D, embedding_, g_embedding_, {c.vocab_size, c.embed});
  gru_ = GruParams<T>(c.hidden, c.embed, c.gru_bias);
  g_gru_ = GruParams<T>(c.hidden, c.embed, c.gru_bias);
  store_.add("gru.w_r", "encoder", D, gru_.w_r, &g_gru_.w_r);
  store_.add("gru.w_z", "encoder", D, gru_.w_z, &g_gru_.w_z);
  store_.add("gru.w_h", "encoder", D, gru_.w_h, &g_gru_.w_h);
  store_.add("gru.u_r", "encoder", D, gru_.u_r, &g_gru_.u_r);
  store_.add("gru.u_z", "encoder", D, gru_.u_z, &g_gru_.u_z);
  store_.add("gru.u_h", "encoder", D, gru_.u_h, &g_gru_.u_h);
  if (c.gru_bias) {
    store_.add("gru.b_r", "encoder", D, gru_.b_r, &g_gru_.b_r);
    store_.add("gru.b_z", "encoder", D, gru_.b_z, &g_gru_.b_z);
    store_.add("gru.b_h", "encoder", D, gru_.b_h, &g_gru_.b_h);
  }

  std::size_t head_width = c.dyn_output;
  if (is_concat()) {
    head_width = c.concat_hidden;
    add("concat.w", "concat", S, concat_w_, g_concat_w_, {head_width, c.dyn_input + c.hidden});
    add("concat.b", "concat", S, concat_b_, g_concat_b_, {head_width});
  } else {
    add("predictor.w_p", "predictor", D, w_p_, g_w_p_, {c.candidates, c.hidden});
    dyn_.emplace(c.hash_spec());
    g_dyn_bias_ = Tensor<T>({c.dyn_output});
    store_.add("dynamic.bias", "dynamic", S, dyn_->bias, &g_dyn_bias_);
  }

  add("bn.gamma", "bn", S, bn_gamma_, g_bn_gamma_, {head_width});
  add("bn.beta", "bn", S, bn_beta_, g_bn_beta_, {head_width});
  bn_running_mean_ = Tensor<T>({head_width}, T{0});
  bn_running_var_ = Tensor<T>({head_width}, T{1});
  store_.add("bn.running_mean", "bn", ParamRole::Buffer, bn_running_mean_, nullptr);
  store_.add("bn.running_var", "bn", ParamRole::Buffer, bn_running_var_, nullptr);

  add("classifier.w", "classifier", S, out_w_, g_out_w_, {c.num_answers, head_width});
  add("classifier.b", "classifier", S, out_b_, g_out_b_, {c.num_answers});
}

template <typename T>
void Model<T>::initialize() {
  Rng rng(config_.init_seed);
  for (auto& p : store_.entries()) {
    Tensor<T>& v = *p.value;
    if (p.name == "bn.gamma" || p.name == "bn.running_var") {
      v.fill(T{1});
    } else if (p.role == ParamRole::Buffer || v.rank() == 1) {
      v.set_zero();
    } else if (p.name == "embedding") {
      // a lookup reads exactly one input row, so its fan-in is 1
      fill_uniform(v, rng, 1.0);
    } else {
      fill_uniform(v, rng, 1.0 / std::sqrt(static_cast<double>(v.cols())));
    }
  }
}

template <typename T>
const DynamicLayer<T>& Model<T>::dynamic_layer() const {
  require(dyn_.has_value(), ErrorCode::InvalidArgument, "CONCAT models have no dynamic layer");
  return *dyn_;
}

template <typename T>
ForwardResult<T> Model<T>::run(const Batch<T>& batch, Mode mode, ForwardCache<T>* cache) const {
  const auto& c = config_;
  const Tensor<T>& x = batch.features;
  require(x.rank() == 2 && x.cols() == c.feature_dim, ErrorCode::ShapeMismatch,
          "features " + shape_to_string(x.shape()) + " do not match feature_dim " +
              std::to_string(c.feature_dim));
  const std::size_t rows = x.rows();
  require(batch.questions.size() == rows, ErrorCode::ShapeMismatch,
          "batch has " + std::to_string(rows) + " feature rows but " +
              std::to_string(batch.questions.size()) + " questions");
  require(x.all_finite(), ErrorCode::Numeric, "features contain non-finite values");

  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;

  fc.adapter_hidden = activation_forward(Activation::Relu, affine(x, adapter_w1_, adapter_b1_));
  fc.f_in = activation_forward(Activation::Relu, affine(fc.adapter_hidden, adapter_w2_, adapter_b2_));

  fc.groups = QuestionGroups::build(batch.questions);
  fc.buckets.clear();
  fc.h_last = encode_unique(fc.groups.unique, embedding_, gru_, cache ? &fc.buckets : nullptr);

  Tensor<T> pre;
  if (is_concat()) {
    const std::size_t n = c.dyn_input, h = c.hidden;
    fc.concat_in = Tensor<T>({rows, n + h});
    for (std::size_t b = 0; b < rows; ++b) {
      auto dst = fc.concat_in.row(b);
      auto fi = fc.f_in.row(b);
      auto hl = fc.h_last.row(fc.groups.group_of[b]);
      std::copy(fi.begin(), fi.end(), dst.begin());
      std::copy(hl.begin(), hl.end(), dst.begin() + static_cast<std::ptrdiff_t>(n));
    }
    pre = affine(fc.concat_in, concat_w_, concat_b_);
  } else {
    fc.p = predict_candidates(fc.h_last, w_p_);
    pre = Tensor<T>({rows, c.dyn_output});
    for (std::size_t u = 0; u < fc.groups.unique.size(); ++u) {
      const auto& members = fc.groups.members[u];
      const Tensor<T> out = dyn_forward(gather_rows(fc.f_in, members), std::span<const T>(fc.p.row(u)), *dyn_);
      scatter_rows(out, members, pre);
    }
  }

  const Tensor<T> normed = batchnorm_forward(pre, bn_gamma_, bn_beta_, bn_running_mean_,
                                             bn_running_var_, c.batchnorm, mode, &fc.bn);
  fc.hidden = activation_forward(Activation::Relu, normed);
  ForwardResult<T> result;
  result.logits = affine(fc.hidden, out_w_, out_b_);
  result.probs = softmax_rows(result.logits);
  return result;
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Batch<T>& batch, Mode mode) const {
  return run(batch, mode, nullptr);
}

template <typename T>
T Model<T>::loss(const Batch<T>& batch, Mode mode) const {
  const auto result = run(batch, mode, nullptr);
  return softmax_xent(result.logits, batch.targets).loss;
}

template <typename T>
T Model<T>::loss_and_backward(const Batch<T>& batch, Mode mode,
                                std::vector<std::size_t>* predictions) {
  ForwardCache<T> cache;
  const auto result = run(batch, mode, &cache);
  if (predictions) {
    predictions->resize(result.probs.rows());
    for (std::size_t i = 0; i < predictions->size(); ++i)
      (*predictions)[i] = argmax(result.probs.row(i));
  }
  const auto xent = softmax_xent(result.logits, batch.targets);
  backward(batch, cache, xent.dlogits);
  return xent.loss;
}

template <typename T>
void Model<T>::backward(const Batch<T>& batch, const ForwardCache<T>& fc, const Tensor<T>& dlogits) {
  const auto& c = config_;
  const std::size_t rows = batch.features.rows();

  matmul_tn_accumulate(dlogits, fc.hidden, g_out_w_);
  accumulate_column_sums(dlogits, g_out_b_);
  const Tensor<T> d_hidden = matmul(dlogits, out_w_);
  const Tensor<T> d_normed = activation_backward(Activation::Relu, fc.hidden, d_hidden);
  const auto bn = batchnorm_backward(d_normed, bn_gamma_, fc.bn);
  add_inplace(g_bn_gamma_, bn.dgamma);
  add_inplace(g_bn_beta_, bn.dbeta);

  Tensor<T> d_f_in({rows, c.dyn_input});
  Tensor<T> d_h_last({fc.groups.unique.size(), c.hidden});
  if (is_concat()) {
    matmul_tn_accumulate(bn.dx, fc.concat_in, g_concat_w_);
    accumulate_column_sums(bn.dx, g_concat_b_);
    const Tensor<T> d_concat = matmul(bn.dx, concat_w_);
    for (std::size_t b = 0; b < rows; ++b) {
      auto src = d_concat.row(b);
      auto df = d_f_in.row(b);
      auto dh = d_h_last.row(fc.groups.group_of[b]);
      for (std::size_t j = 0; j < c.dyn_input; ++j) df[j] = src[j];
      for (std::size_t j = 0; j < c.hidden; ++j) dh[j] += src[c.dyn_input + j];
    }
  } else {
    Tensor<T> d_p({fc.groups.unique.size(), c.candidates});
    for (std::size_t u = 0; u < fc.groups.unique.size(); ++u) {
      const auto& members = fc.groups.members[u];
      const auto g = dyn_backward(gather_rows(fc.f_in, members), fc.p.row(u),
                                  gather_rows(bn.dx, members), *dyn_);
      scatter_rows(g.input, members, d_f_in);
      std::copy(g.p.data().begin(), g.p.data().end(), d_p.row(u).begin());
      add_inplace(g_dyn_bias_, g.bias);
    }
    d_h_last = predict_candidates_backward(d_p, fc.h_last, w_p_, g_w_p_);
  }

  if (!store_.group_frozen("encoder")) {
    for (const auto& bucket : fc.buckets) {
      const Tensor<T> dh = gather_rows(d_h_last, bucket.groups);
      const auto dxs = gru_encode_backward(dh, bucket.encoding, gru_, g_gru_);
      for (std::size_t t = 0; t < dxs.size(); ++t) {
        for (std::size_t g = 0; g < bucket.groups.size(); ++g) {
          const TokenId tok = fc.groups.unique[bucket.groups[g]][t];
          auto src = dxs[t].row(g);
          auto dst = g_embedding_.row(tok);
          for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
      }
    }
  }

  if (!store_.group_frozen("adapter")) {
    const Tensor<T> d_a2 = activation_backward(Activation::Relu, fc.f_in, d_f_in);
    matmul_tn_accumulate(d_a2, fc.adapter_hidden, g_adapter_w2_);
    accumulate_column_sums(d_a2, g_adapter_b2_);
    const Tensor<T> d_h1 = matmul(d_a2, adapter_w2_);
    const Tensor<T> d_a1 = activation_backward(Activation::Relu, fc.adapter_hidden, d_h1);
    matmul_tn_accumulate(d_a1, batch.features, g_adapter_w1_);
    accumulate_column_sums(d_a1, g_adapter_b1_);
  }
}

template <typename T>
std::size_t Model<T>::argmax(std::span<const T> probs, const std::vector<std::size_t>* allowed) {
  require(!probs.empty(), ErrorCode::InvalidArgument, "argmax of an empty distribution");
  std::size_t best = probs.size();
  auto consider = [&](std::size_t k) {
    if (k >= probs.size()) return;
    if (best == probs.size() || probs[k] > probs[best]) best = k;
  };
  if (allowed && !allowed->empty()) {
    std::vector<std::size_t> sorted = *allowed;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k : sorted) consider(k);
  } else {
    for (std::size_t k = 0; k < probs.size(); ++k) consider(k);
  }
  require(best < probs.size(), ErrorCode::InvalidArgument, "no allowed class is in range");
  return best;
}

template <typename T>
std::vector<std::size_t> Model<T>::predict(const Batch<T>& batch) const {
  const auto result = forward(batch, Mode::Eval);
  std::vector<std::size_t> out(result.probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax(result.probs.row(i));
  return out;
}

template <typename T>
Tensor<T> Model<T>::encode_questions(const std::vector<TokenSeq>& questions) const {
  require(!questions.empty(), ErrorCode::InvalidArgument, "no questions to encode");
  const QuestionGroups groups = QuestionGroups::build(questions);
  const Tensor<T> unique = encode_unique<T>(groups.unique, embedding_, gru_, nullptr);
  Tensor<T> out({questions.size(), config_.hidden});
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto src = unique.row(groups.group_of[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::candidate_weights(const std::vector<TokenSeq>& questions) const {
  require(!is_concat(), ErrorCode::InvalidArgument, "CONCAT models do not predict candidate weights");
  return predict_candidates(encode_questions(questions), w_p_);
}

template <typename T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "cosine similarity of unequal lengths");
  T dot{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == T{0} || nb == T{0}) return T{0};
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

template <typename T>
std::vector<RetrievalHit<T>> Model<T>::retrieve_similar(const TokenSeq& query,
                                                        const std::vector<TokenSeq>& corpus,
                                                        std::size_t top_k) const {
  require(!corpus.empty(), ErrorCode::InvalidArgument, "retrieval corpus is empty");
  const Tensor<T> q = encode_questions({query});
  const Tensor<T> h = encode_questions(corpus);
  std::vector<RetrievalHit<T>> hits(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    hits[i] = {i, cosine_similarity<T>(q.row(0), h.row(i))};
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.similarity > b.similarity; });
  if (top_k < hits.size()) hits.resize(top_k);
  return hits;
}

template struct ForwardCache<float>;
template struct ForwardCache<double>;
template class Model<float>;
template class Model<double>;
template float cosine_similarity(std::span<const float>, std::span<const float>);
template double cosine_similarity(std::span<const double>, std::span<const double>);

}  // namespace dppnet
