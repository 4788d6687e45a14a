// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dppnet/model.hpp"
#include "oracles.hpp"

using namespace dppnet;

namespace {

ModelConfig toy_config(Variant variant = Variant::Dppnet) {
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
  c.variant = variant;
  return c;
}

Batch<double> toy_batch(std::mt19937_64& gen, const ModelConfig& c, std::vector<TokenSeq> questions) {
  Batch<double> b;
  b.features = oracle::random_tensor(gen, {questions.size(), c.feature_dim});
  b.questions = std::move(questions);
  for (std::size_t i = 0; i < b.questions.size(); ++i) b.targets.push_back(oracle::random_extent(gen, 0, c.num_answers - 1));
  return b;
}

GradCheckReport check_model(Model<double>& model, const Batch<double>& batch, Mode mode) {
  return grad_check(model.params(), [&](bool with_grad) {
    if (!with_grad) return model.loss(batch, mode);
    model.params().zero_grad();
    return model.loss_and_backward(batch, mode);
  });
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("output is a distribution over the answers") {
  for (const auto v : {Variant::Dppnet, Variant::Concat}) {
    const auto c = toy_config(v);
    Model<double> model(c);
    std::mt19937_64 gen(1);
    const auto batch = toy_batch(gen, c, {{1, 2, 3}, {4}, {1, 2, 3}, {5, 6}});
    for (const auto mode : {Mode::Train, Mode::Eval}) {
      const auto out = model.forward(batch, mode);
      REQUIRE(out.probs.shape() == Shape{4, 6});
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 6; ++k) s += out.probs(r, k);
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("zero projection makes the answer independent of the question") {
  const auto c = toy_config();
  Model<double> model(c);
  model.params().at("predictor.w_p").value->set_zero();
  model.params().at("dynamic.bias").value->set_zero();
  std::mt19937_64 gen(2);
  auto batch = toy_batch(gen, c, {{1, 2, 3}, {7, 8}});
  for (std::size_t f = 0; f < c.feature_dim; ++f) batch.features(1, f) = batch.features(0, f);
  const auto out = model.forward(batch, Mode::Eval);
  for (std::size_t k = 0; k < c.num_answers; ++k) CHECK(out.probs(0, k) == out.probs(1, k));
}

TEST_CASE("end-to-end gradients on a two-example batch") {
  const auto c = toy_config();
  Model<double> model(c);
  std::mt19937_64 gen(3);
  const auto batch = toy_batch(gen, c, {{1, 2, 3}, {4, 5}});
  const auto report = check_model(model, batch, Mode::Train);
  CHECK(report.passed);
  CHECK(report.max_rel_error() <= 1e-5);
  for (const auto& e : report.entries) CHECK_MESSAGE(e.passed, e.name);
}

TEST_CASE("gradients with shared questions and GRU biases") {
  auto c = toy_config();
  c.gru_bias = true;
  Model<double> model(c);
  std::mt19937_64 gen(4);
  const auto batch = toy_batch(gen, c, {{1, 2}, {3}, {1, 2}, {3}, {9, 9, 9}});
  CHECK(check_model(model, batch, Mode::Train).passed);
  CHECK(check_model(model, batch, Mode::Eval).passed);
}

TEST_CASE("CONCAT gradients") {
  const auto c = toy_config(Variant::Concat);
  Model<double> model(c);
  std::mt19937_64 gen(5);
  const auto batch = toy_batch(gen, c, {{1, 2, 3}, {4, 5}, {6}});
  const auto report = check_model(model, batch, Mode::Train);
  CHECK(report.passed);
  CHECK(report.max_rel_error() <= 1e-5);
}

TEST_CASE("CONCAT parameter count is matched within five percent") {
  for (std::size_t k : {32u, 128u, 256u, 1024u})
    for (std::size_t hidden : {8u, 64u})
      for (std::size_t answers : {6u, 13u, 100u}) {
        ModelConfig c = toy_config();
        c.feature_dim = 22;
        c.adapter_hidden = 128;
        c.dyn_input = 64;
        c.dyn_output = 64;
        c.candidates = k;
        c.hidden = hidden;
        c.embed = 32;
        c.num_answers = answers;
        c.vocab_size = 30;
        const double dpp = static_cast<double>(dppnet_parameter_count(c));
        const double cat = static_cast<double>(concat_parameter_count(c, matched_concat_hidden(c)));
        CHECK(cat / dpp >= 0.95);
        CHECK(cat / dpp <= 1.05);
      }
  const auto c = toy_config();
  Model<double> dpp(c);
  Model<double> cat(toy_config(Variant::Concat));
  CHECK(dpp.parameter_count() == dppnet_parameter_count(c));
  const double ratio = static_cast<double>(cat.parameter_count()) / static_cast<double>(dpp.parameter_count());
  CHECK((ratio >= 0.95 && ratio <= 1.05));
}

TEST_CASE("dynamic weights are never parameters") {
  const auto c = toy_config();
  Model<double> model(c);
  std::size_t dynamic_scalars = 0;
  for (const auto& p : model.params().entries()) {
    if (p.group == "dynamic") dynamic_scalars += p.value->size();
    CHECK(p.value->size() != c.dyn_output * c.dyn_input);
  }
  CHECK(dynamic_scalars == c.dyn_output);  // the bias only
  CHECK(model.params().at("predictor.w_p").value->shape() == Shape{c.candidates, c.hidden});
}

TEST_CASE("argmax ties go to the lowest class") {
  const std::vector<double> probs{0.1, 0.05, 0.3, 0.1, 0.15, 0.3};
  CHECK(Model<double>::argmax(probs) == 2);
  const std::vector<double> unique{0.1, 0.6, 0.3};
  CHECK(Model<double>::argmax(unique) == 1);
  const std::vector<std::size_t> allowed{5, 0, 3};
  CHECK(Model<double>::argmax(probs, &allowed) == 5);
}

TEST_CASE("eval forward is bit-reproducible and row independent") {
  const auto c = toy_config();
  Model<double> model(c);
  std::mt19937_64 gen(6);
  const auto batch = toy_batch(gen, c, {{1, 2, 3}, {4}, {1, 2, 3}, {5, 6}, {4}});
  const auto first = model.forward(batch, Mode::Eval).probs;
  CHECK(model.forward(batch, Mode::Eval).probs == first);
  for (std::size_t r = 0; r < batch.questions.size(); ++r) {
    const std::vector<std::size_t> rows{r};
    Batch<double> single;
    single.features = Tensor<double>({1, c.feature_dim}, batch.features.row(r));
    single.questions = {batch.questions[r]};
    const auto alone = model.forward(single, Mode::Eval).probs;
    for (std::size_t k = 0; k < c.num_answers; ++k) CHECK(std::abs(alone(0, k) - first(r, k)) <= 1e-12);
  }
}

TEST_CASE("question grouping") {
  const auto g = QuestionGroups::build({{1, 2}, {3}, {1, 2}, {4}, {3}});
  CHECK(g.unique == std::vector<TokenSeq>{{1, 2}, {3}, {4}});
  CHECK(g.group_of == std::vector<std::size_t>{0, 1, 0, 2, 1});
  CHECK(g.members[1] == std::vector<std::size_t>{1, 4});
}

TEST_CASE("frozen groups receive no gradient") {
  const auto c = toy_config();
  Model<double> model(c);
  model.params().set_group_frozen("adapter", true);
  model.params().set_group_frozen("encoder", true);
  std::mt19937_64 gen(7);
  const auto batch = toy_batch(gen, c, {{1, 2}, {3, 4}, {5}});
  model.params().zero_grad();
  (void)model.loss_and_backward(batch);
  for (const auto& p : model.params().entries()) {
    if (!p.grad) continue;
    double norm = 0.0;
    for (double v : p.grad->data()) norm += v * v;
    if (p.group == "adapter" || p.group == "encoder")
      CHECK_MESSAGE(norm == 0.0, p.name);
    else if (p.group == "classifier")
      CHECK_MESSAGE(norm > 0.0, p.name);
  }
}

TEST_CASE("retrieval ranking") {
  const auto c = toy_config();
  Model<double> model(c);
  const std::vector<TokenSeq> corpus{{1, 2, 3}, {4, 5}, {6}, {1, 2, 3, 7}};
  const auto hits = model.retrieve_similar({4, 5}, corpus, 2);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].index == 1);
  CHECK(std::abs(hits[0].similarity - 1.0) <= 1e-12);
  CHECK(hits[0].similarity >= hits[1].similarity);
  const auto all = model.retrieve_similar({6}, corpus, 10);
  CHECK(all.size() == corpus.size());
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].similarity >= all[i].similarity);
  CHECK_THROWS_AS(model.retrieve_similar({6}, {}, 3), Error);
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1.0, 2.0, 2.0}, b{2.0, 4.0, 4.0}, z{0.0, 0.0, 0.0}, o{2.0, -1.0, 0.0};
  CHECK(cosine_similarity<double>(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity<double>(a, z) == 0.0);
  CHECK(cosine_similarity<double>(a, o) == 0.0);
}

TEST_CASE("configuration checks and serialization") {
  auto c = toy_config();
  CHECK(model_config_from_json(to_json(c)).candidates == c.candidates);
  CHECK(to_json(model_config_from_json(to_json(c))) == to_json(c));
  c.candidates = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = toy_config();
  c.num_answers = 0;
  CHECK_THROWS_AS(Model<double>{c}, Error);
  CHECK(parse_variant("cnn-fixed") == Variant::CnnFixed);
  CHECK_THROWS_AS(parse_variant("lstm"), Error);
  CHECK(c.hash_spec().candidates == 32);
}

TEST_CASE("initialisation is seeded") {
  const auto c = toy_config();
  Model<double> a(c), b(c);
  auto other = c;
  other.init_seed = 2;
  Model<double> d(other);
  CHECK(*a.params().at("predictor.w_p").value == *b.params().at("predictor.w_p").value);
  CHECK_FALSE(*a.params().at("predictor.w_p").value == *d.params().at("predictor.w_p").value);
}

TEST_CASE("shape errors propagate") {
  const auto c = toy_config();
  Model<double> model(c);
  Batch<double> bad;
  bad.features = Tensor<double>({2, c.feature_dim + 1});
  bad.questions = {{1}, {2}};
  CHECK_THROWS_AS(model.forward(bad, Mode::Eval), Error);
  bad.features = Tensor<double>({2, c.feature_dim});
  bad.questions = {{1}, {}};
  CHECK_THROWS_AS(model.forward(bad, Mode::Eval), Error);
  bad.questions = {{1}, {static_cast<TokenId>(c.vocab_size)}};
  CHECK_THROWS_AS(model.forward(bad, Mode::Eval), Error);
}

}  // TEST_SUITE
