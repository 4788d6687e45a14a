// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>

#include "dppnet/pipeline.hpp"
#include "dppnet/random.hpp"

namespace dppnet {

using nlohmann::json;

namespace {

using Mat = Tensor<double>;

Mat random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform in ±[lo, hi] so no entry sits near the relu kink.
Mat away_from_zero(Shape shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
  Mat t(std::move(shape));
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

double weighted_sum(const Mat& y, const Mat& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

json report_json(const std::string& name, const GradCheckReport& r) {
  json params = json::array();
  for (const auto& e : r.entries)
    params.push_back({{"name", e.name}, {"count", e.count}, {"max_rel_error", e.max_rel_error},
                      {"max_abs_error", e.max_abs_error}, {"passed", e.passed}});
  json j = {{"name", name}, {"passed", r.passed}, {"max_rel_error", r.max_rel_error()}, {"params", params}};
  if (!r.failure.empty()) j["failure"] = r.failure;
  return j;
}

struct Suite {
  GradCheckOptions options;
  Rng rng;
  json checks = json::array();
  bool passed = true;
  double worst = 0.0;

  void record(const std::string& name, const GradCheckReport& r) {
    checks.push_back(report_json(name, r));
    passed = passed && r.passed;
    worst = std::max(worst, r.max_rel_error());
  }

  void record_exact(const std::string& name, double max_abs, double tolerance) {
    const bool ok = max_abs <= tolerance;
    checks.push_back({{"name", name}, {"passed", ok}, {"max_abs_error", max_abs}, {"tolerance", tolerance}});
    passed = passed && ok;
  }
};

void check_matmul(Suite& s) {
  Mat a = random_tensor({3, 4}, s.rng), b = random_tensor({4, 5}, s.rng), bt = random_tensor({5, 4}, s.rng);
  Mat ga(a.shape()), gb(b.shape()), gbt(bt.shape());
  const Mat w = random_tensor({3, 5}, s.rng);
  {
    ParamStore<double> store;
    store.add("a", "op", ParamRole::Static, a, &ga);
    store.add("b", "op", ParamRole::Static, b, &gb);
    s.record("matmul", grad_check(store, [&](bool grad) {
      if (grad) {
        store.zero_grad();
        add_inplace(ga, matmul_nt(w, b));
        add_inplace(gb, matmul_tn(a, w));
      }
      return weighted_sum(matmul(a, b), w);
    }, s.options));
  }
  {
    ParamStore<double> store;
    store.add("a", "op", ParamRole::Static, a, &ga);
    store.add("b", "op", ParamRole::Static, bt, &gbt);
    s.record("matmul_nt", grad_check(store, [&](bool grad) {
      if (grad) {
        store.zero_grad();
        add_inplace(ga, matmul(w, bt));
        matmul_tn_accumulate(w, a, gbt);
      }
      return weighted_sum(matmul_nt(a, bt), w);
    }, s.options));
  }
}

void check_activations(Suite& s) {
  const std::pair<Activation, const char*> kinds[] = {
      {Activation::Sigmoid, "sigmoid"}, {Activation::Tanh, "tanh"}, {Activation::Relu, "relu"}};
  for (const auto& [kind, name] : kinds) {
    Mat x = away_from_zero({3, 4}, s.rng), gx(x.shape());
    const Mat w = random_tensor({3, 4}, s.rng);
    ParamStore<double> store;
    store.add("x", "op", ParamRole::Static, x, &gx);
    s.record(std::string("activation.") + name, grad_check(store, [&, kind = kind](bool grad) {
      const Mat y = activation_forward(kind, x);
      if (grad) {
        store.zero_grad();
        add_inplace(gx, activation_backward(kind, y, w));
      }
      return weighted_sum(y, w);
    }, s.options));
  }
}

void check_softmax_xent(Suite& s) {
  Mat z = random_tensor({4, 6}, s.rng, -2.0, 2.0), gz(z.shape());
  const std::vector<std::size_t> targets = {0, 3, 5, 3};
  ParamStore<double> store;
  store.add("logits", "op", ParamRole::Static, z, &gz);
  s.record("softmax_xent", grad_check(store, [&](bool grad) {
    const auto r = softmax_xent(z, targets);
    if (grad) {
      store.zero_grad();
      add_inplace(gz, r.dlogits);
    }
    return r.loss;
  }, s.options));
}

void check_batchnorm(Suite& s, Mode mode, const char* name) {
  Mat x = random_tensor({5, 3}, s.rng, -2.0, 2.0), gamma = random_tensor({3}, s.rng, 0.5, 1.5),
      beta = random_tensor({3}, s.rng);
  Mat gx(x.shape()), gg(gamma.shape()), gbeta(beta.shape());
  Mat mean = random_tensor({3}, s.rng), var = random_tensor({3}, s.rng, 0.5, 2.0);
  const Mat w = random_tensor({5, 3}, s.rng);
  const BatchNormOptions opts;
  ParamStore<double> store;
  store.add("x", "op", ParamRole::Static, x, &gx);
  store.add("gamma", "op", ParamRole::Static, gamma, &gg);
  store.add("beta", "op", ParamRole::Static, beta, &gbeta);
  s.record(name, grad_check(store, [&](bool grad) {
    Mat m = mean, v = var;  // running stats stay fixed across evaluations
    BatchNormCache<double> cache;
    const Mat y = batchnorm_forward(x, gamma, beta, m, v, opts, mode, &cache);
    if (grad) {
      store.zero_grad();
      const auto g = batchnorm_backward(w, gamma, cache);
      add_inplace(gx, g.dx);
      add_inplace(gg, g.dgamma);
      add_inplace(gbeta, g.dbeta);
    }
    return weighted_sum(y, w);
  }, s.options));
}

void check_dynamic(Suite& s) {
  HashSpec spec;
  spec.rows = 7;
  spec.cols = 9;
  spec.candidates = 11;
  DynamicLayer<double> layer(spec);
  layer.bias = random_tensor({spec.rows}, s.rng);
  Mat input = random_tensor({3, spec.cols}, s.rng), p = random_tensor({spec.candidates}, s.rng);
  Mat gin(input.shape()), gp(p.shape()), gbias(layer.bias.shape());
  const Mat w = random_tensor({3, spec.rows}, s.rng);
  ParamStore<double> store;
  store.add("input", "op", ParamRole::Static, input, &gin);
  store.add("p", "op", ParamRole::DynamicProducing, p, &gp);
  store.add("bias", "op", ParamRole::Static, layer.bias, &gbias);
  s.record("dynamic_layer", grad_check(store, [&](bool grad) {
    const Mat out = dyn_forward(input, std::span<const double>(p.data()), layer);
    if (grad) {
      store.zero_grad();
      const auto g = dyn_backward(input, std::span<const double>(p.data()), w, layer);
      add_inplace(gin, g.input);
      add_inplace(gp, g.p);
      add_inplace(gbias, g.bias);
    }
    return weighted_sum(out, w);
  }, s.options));

  // hashed layer against the materialised dense matrix
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    HashSpec h;
    h.rows = static_cast<std::uint32_t>(1 + s.rng.below(64));
    h.cols = static_cast<std::uint32_t>(1 + s.rng.below(64));
    h.candidates = static_cast<std::uint32_t>(1 + s.rng.below(64));
    h.seed_psi = s.rng.next();
    h.seed_xi = h.seed_psi ^ 0x9E3779B97F4A7C15ULL;
    DynamicLayer<double> l(h);
    l.bias = random_tensor({h.rows}, s.rng);
    const std::size_t batch = 1 + s.rng.below(4);
    const Mat x = random_tensor({batch, h.cols}, s.rng), q = random_tensor({h.candidates}, s.rng);
    const Mat delta = random_tensor({batch, h.rows}, s.rng);
    const std::span<const double> qs(q.data());
    const Mat dense = materialize_weights(qs, h);
    Mat expect = matmul_nt(x, dense);
    add_row_broadcast(expect, l.bias);
    const Mat got = dyn_forward(x, qs, l);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - expect[i]));
    const auto g = dyn_backward(x, qs, delta, l);
    const Mat din = matmul(delta, dense);
    for (std::size_t i = 0; i < din.size(); ++i) worst = std::max(worst, std::abs(g.input[i] - din[i]));
  }
  s.record_exact("dynamic_layer.dense_equivalence", worst, 1e-12);
}

void check_gru(Suite& s, bool bias) {
  const std::size_t hidden = 5, input = 4, rows = 2, steps = 3;
  GruParams<double> gru(hidden, input, bias), ggru(hidden, input, bias);
  for (Mat* t : {&gru.w_r, &gru.w_z, &gru.w_h, &gru.u_r, &gru.u_z, &gru.u_h}) *t = random_tensor(t->shape(), s.rng);
  if (bias)
    for (Mat* t : {&gru.b_r, &gru.b_z, &gru.b_h}) *t = random_tensor(t->shape(), s.rng);
  std::vector<Mat> xs, gxs;
  for (std::size_t t = 0; t < steps; ++t) {
    xs.push_back(random_tensor({rows, input}, s.rng));
    gxs.emplace_back(Shape{rows, input});
  }
  const Mat w = random_tensor({rows, hidden}, s.rng);
  ParamStore<double> store;
  const char* names[] = {"w_r", "w_z", "w_h", "u_r", "u_z", "u_h"};
  Mat* values[] = {&gru.w_r, &gru.w_z, &gru.w_h, &gru.u_r, &gru.u_z, &gru.u_h};
  Mat* grads[] = {&ggru.w_r, &ggru.w_z, &ggru.w_h, &ggru.u_r, &ggru.u_z, &ggru.u_h};
  for (int i = 0; i < 6; ++i) store.add(names[i], "gru", ParamRole::DynamicProducing, *values[i], grads[i]);
  if (bias) {
    store.add("b_r", "gru", ParamRole::DynamicProducing, gru.b_r, &ggru.b_r);
    store.add("b_z", "gru", ParamRole::DynamicProducing, gru.b_z, &ggru.b_z);
    store.add("b_h", "gru", ParamRole::DynamicProducing, gru.b_h, &ggru.b_h);
  }
  for (std::size_t t = 0; t < steps; ++t) store.add("x" + std::to_string(t), "input", ParamRole::Static, xs[t], &gxs[t]);
  s.record(bias ? "gru_encode.bias" : "gru_encode", grad_check(store, [&](bool grad) {
    const auto enc = gru_encode(xs, gru);
    if (grad) {
      store.zero_grad();
      const auto dxs = gru_encode_backward(w, enc, gru, ggru);
      for (std::size_t t = 0; t < steps; ++t) add_inplace(gxs[t], dxs[t]);
    }
    return weighted_sum(enc.h_last, w);
  }, s.options));
}

Batch<double> toy_batch(const ModelConfig& c, std::size_t rows, Rng& rng, bool repeat_questions) {
  Batch<double> b;
  b.features = random_tensor({rows, c.feature_dim}, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    if (repeat_questions && i % 3 == 2) {
      b.questions.push_back(b.questions[i - 1]);
    } else {
      TokenSeq q(2 + rng.below(3));
      for (auto& t : q) t = static_cast<TokenId>(rng.below(c.vocab_size));
      b.questions.push_back(std::move(q));
    }
    b.targets.push_back(static_cast<std::size_t>(rng.below(c.num_answers)));
  }
  return b;
}

void check_model(Suite& s, const std::string& name, ModelConfig c, std::size_t rows, Mode mode, bool repeat) {
  c.init_seed = s.rng.next();
  Model<double> model(c);
  auto& store = model.params();
  // nonzero biases and running statistics so every path carries signal
  for (auto& p : store.entries()) {
    if (p.value->rank() != 1) continue;
    if (p.name == "bn.running_var" || p.name == "bn.gamma") *p.value = random_tensor(p.value->shape(), s.rng, 0.5, 1.5);
    else *p.value = random_tensor(p.value->shape(), s.rng, -0.5, 0.5);
  }
  const Batch<double> batch = toy_batch(c, rows, s.rng, repeat);
  const auto running = store.snapshot();
  s.record(name, grad_check(store, [&](bool grad) {
    if (grad) {
      store.zero_grad();
      return model.loss_and_backward(batch, mode);
    }
    return model.loss(batch, mode);
  }, s.options));
  store.restore(running);
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.feature_dim = 24;
  c.adapter_hidden = 20;
  c.dyn_input = 16;
  c.dyn_output = 12;
  c.candidates = 32;
  c.hidden = 8;
  c.embed = 8;
  c.num_answers = 6;
  c.vocab_size = 10;
  return c;
}

json run_gradcheck(const json& config, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Suite s{{}, Rng(seed)};
  ModelConfig toy = gradcheck_model_config();
  std::size_t batch = 2;
  if (!config.is_null()) {
    require(config.is_object(), ErrorCode::Config, "gradcheck config must be a JSON object");
    try {
      if (config.contains("model")) {
        json merged = to_json(toy);
        merged.update(config.at("model"));
        toy = model_config_from_json(merged);
      }
      batch = config.value("batch", batch);
      s.options.epsilon = config.value("epsilon", s.options.epsilon);
      s.options.tolerance = config.value("tolerance", s.options.tolerance);
      s.options.magnitude_floor = config.value("magnitude_floor", s.options.magnitude_floor);
    } catch (const json::exception& e) {
      fail(ErrorCode::Config, std::string("malformed gradcheck config: ") + e.what());
    }
  }
  require(batch >= 2, ErrorCode::Config, "gradcheck batch must be >= 2 for train-mode batch norm");

  check_matmul(s);
  check_activations(s);
  check_softmax_xent(s);
  check_batchnorm(s, Mode::Train, "batchnorm.train");
  check_batchnorm(s, Mode::Eval, "batchnorm.eval");
  check_dynamic(s);
  check_gru(s, false);
  check_gru(s, true);

  ModelConfig dpp = toy;
  dpp.variant = Variant::Dppnet;
  check_model(s, "dppnet.train", dpp, batch, Mode::Train, false);
  check_model(s, "dppnet.eval", dpp, 4, Mode::Eval, false);
  check_model(s, "dppnet.grouped_questions", dpp, 6, Mode::Train, true);
  ModelConfig with_bias = dpp;
  with_bias.gru_bias = true;
  check_model(s, "dppnet.gru_bias", with_bias, batch, Mode::Train, false);
  ModelConfig concat = toy;
  concat.variant = Variant::Concat;
  concat.concat_hidden = 0;
  check_model(s, "concat.train", concat, 3, Mode::Train, false);

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {{"passed", s.passed},
          {"max_rel_error", s.worst},
          {"tolerance", s.options.tolerance},
          {"epsilon", s.options.epsilon},
          {"magnitude_floor", s.options.magnitude_floor},
          {"seed", seed},
          {"seconds", seconds},
          {"toy_config", to_json(toy)},
          {"checks", s.checks}};
}

}  // namespace dppnet
