// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <set>

#include "dppnet/checkpoint.hpp"
#include "dppnet/pipeline.hpp"
#include "oracles.hpp"

using namespace dppnet;
using nlohmann::json;

namespace {

// Default synthetic task, data seed 1, DPPnet, f32, model seed 1.
struct Fixture {
  oracle::TempDir dir{"fixture"};
  SyntheticConfig data_config;
  SyntheticSplits splits;
  json summary;
  LoadedModel model;

  Fixture() : splits(generate_synthetic(data_config, 1)) {
    RunConfig config;
    config.set_seed(1);
    summary = train_run(config, splits.train, splits.val, dir.path() / "run");
    model = LoadedModel::load(dir.path() / "run");
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

std::string template_of(const std::string& question) {
  for (const char* prefix : {"what color", "what shape", "how many", "is there"})
    if (question.rfind(prefix, 0) == 0) return prefix;
  return {};
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream out(path);
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace

TEST_SUITE("integration") {

TEST_CASE("fixture converges") {
  const auto& f = fixture();
  CHECK(f.summary.at("best_val_acc").get<double>() >= 0.9);
  const auto report = f.model.evaluate(f.splits.test, EvalOptions{});
  CHECK(report.at("accuracy").get<double>() >= 0.9);
  CHECK(report.at("unknown_answers") == 0);
}

TEST_CASE("reported validation accuracy is reproduced from the checkpoint") {
  const auto& f = fixture();
  const auto report = f.model.evaluate(f.splits.val, EvalOptions{});
  CHECK(report.at("accuracy").get<double>() == f.summary.at("best_val_acc").get<double>());
}

TEST_CASE("colour of the square") {
  const auto& f = fixture();
  const std::string question = "what color is the square?";
  std::size_t correct = 0, total = 0;
  std::string first_truth, first_answer;
  for (const auto& ex : f.splits.test.examples) {
    if (ex.question != question) continue;
    const auto p = f.model.predict(ex.features, question);
    if (total == 0) {
      first_truth = ex.primary_answer();
      first_answer = p.answer;
    }
    correct += p.answer == ex.primary_answer();
    ++total;
  }
  REQUIRE(total > 0);
  CHECK(first_answer == first_truth);
  MESSAGE("square colour questions answered " << correct << "/" << total);
  CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.9);
}

TEST_CASE("the answer depends on the question") {
  const auto& f = fixture();
  const auto& c = f.data_config;
  std::size_t differing = 0, scenes = 0, correct = 0, asked = 0;
  for (std::size_t a = 0; a < c.shapes; ++a)
    for (std::size_t b = 0; b < c.shapes; ++b) {
      if (a == b) continue;
      const std::size_t ca = a % c.colors, cb = (a + 1) % c.colors;
      const auto features = encode_scene({{a, ca, 1}, {b, cb, 3}}, c);
      const auto first = f.model.predict(features, "what color is the " + shape_names()[a] + "?");
      const auto second = f.model.predict(features, "what color is the " + shape_names()[b] + "?");
      const auto count = f.model.predict(features, "how many " + shape_names()[b] + "?");
      differing += first.answer != second.answer;
      ++scenes;
      correct += (first.answer == color_names()[ca]) + (second.answer == color_names()[cb]) + (count.answer == "3");
      asked += 3;
    }
  MESSAGE("scenes where the two colour questions disagree: " << differing << "/" << scenes);
  CHECK(differing >= 1);
  CHECK(static_cast<double>(correct) / static_cast<double>(asked) >= 0.9);
}

TEST_CASE("nearest questions share the template") {
  const auto& f = fixture();
  std::vector<std::string> corpus;
  std::set<std::string> seen;
  for (const auto& ex : f.splits.test.examples)
    if (seen.insert(ex.question).second) corpus.push_back(ex.question);
  REQUIRE(corpus.size() > 10);
  std::size_t hits = 0;
  for (const auto& query : corpus) {
    const auto ranked = f.model.retrieve(query, corpus, 2);
    // rank 1 is the query itself
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].at("question") == query);
    hits += template_of(ranked[1].at("question").get<std::string>()) == template_of(query);
  }
  const double rate = static_cast<double>(hits) / static_cast<double>(corpus.size());
  MESSAGE("same-template nearest neighbour rate " << rate);
  CHECK(rate >= 0.9);
}

TEST_CASE("eval is deterministic") {
  const auto& f = fixture();
  const auto a = f.model.predict_dataset(f.splits.test);
  const auto b = f.model.predict_dataset(f.splits.test);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cls == b[i].cls);
    CHECK(a[i].confidence == b[i].confidence);
  }
}

TEST_CASE("a perfect prediction file scores one everywhere") {
  const auto& f = fixture();
  oracle::TempDir dir("preds");
  std::vector<json> records;
  for (std::size_t i = 0; i < f.splits.test.size(); ++i)
    records.push_back({{"id", example_key(f.splits.test, i)}, {"answer", f.splits.test.examples[i].primary_answer()}});
  write_lines(dir.path() / "preds.jsonl", records);
  EvalOptions options;
  options.taxonomy = std::string(DPPNET_SOURCE_DIR) + "/data/toy_taxonomy.txt";
  options.vqa = true;
  const auto report = evaluate_prediction_file(dir.path() / "preds.jsonl", f.splits.test, options);
  CHECK(report.at("accuracy") == 1.0);
  CHECK(report.at("vqa_accuracy").get<double>() == doctest::Approx(1.0 / 3.0));
  for (const auto& w : report.at("wups")) CHECK(w.at("score") == 1.0);
  CHECK(report.at("missing_predictions") == 0);

  records.pop_back();
  write_lines(dir.path() / "short.jsonl", records);
  const auto partial = evaluate_prediction_file(dir.path() / "short.jsonl", f.splits.test, options);
  CHECK(partial.at("missing_predictions") == 1);
  CHECK(partial.at("accuracy").get<double>() < 1.0);
}

TEST_CASE("multiple-choice masks restrict the answer") {
  const auto& f = fixture();
  oracle::TempDir dir("mc");
  Dataset subset;
  subset.feature_dim = f.splits.test.feature_dim;
  subset.examples.assign(f.splits.test.examples.begin(), f.splits.test.examples.begin() + 20);
  std::vector<json> records;
  for (std::size_t i = 0; i < subset.size(); ++i)
    records.push_back({{"id", example_key(subset, i)}, {"candidates", json::array({"no"})}});
  write_lines(dir.path() / "mc.jsonl", records);
  const auto mask = load_candidate_mask(dir.path() / "mc.jsonl");
  for (const auto& p : f.model.predict_dataset(subset, &mask)) CHECK(p.answer == "no");

  EvalOptions options;
  options.multiple_choice = (dir.path() / "mc.jsonl").string();
  CHECK(f.model.evaluate(subset, options).at("multiple_choice") == true);
}

TEST_CASE("checkpoint conflicts are rejected") {
  const auto& f = fixture();
  oracle::TempDir dir("conflict");
  std::filesystem::copy(f.dir.path() / "run", dir.path() / "run");
  auto config = read_json_file(dir.path() / "run" / kRunConfigFile);
  config["model"]["candidates"] = config["model"]["candidates"].get<std::size_t>() * 2;
  write_json_file(dir.path() / "run" / kRunConfigFile, config);
  try {
    (void)LoadedModel::load(dir.path() / "run");
    FAIL("conflicting K accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
    CHECK(std::string(e.what()).find("K=") != std::string::npos);
  }
}

TEST_CASE("a saved run config reproduces the run") {
  SyntheticConfig small;
  small.train_size = 300;
  small.val_size = 60;
  small.test_size = 10;
  const auto splits = generate_synthetic(small, 5);
  oracle::TempDir dir("rerun");
  RunConfig config;
  config.set_seed(3);
  config.schedule.max_epochs = 3;
  const auto first = train_run(config, splits.train, splits.val, dir.path() / "a");
  const auto saved = run_config_from_json(read_json_file(dir.path() / "a" / kRunConfigFile));
  const auto second = train_run(saved, splits.train, splits.val, dir.path() / "b");
  CHECK(first.at("best_val_acc") == second.at("best_val_acc"));
  std::ifstream la(dir.path() / "a" / kTrainLogFile), lb(dir.path() / "b" / kTrainLogFile);
  std::string line_a, line_b;
  std::size_t lines = 0;
  while (std::getline(la, line_a)) {
    REQUIRE(std::getline(lb, line_b));
    CHECK(json::parse(line_a) == json::parse(line_b));
    ++lines;
  }
  CHECK(lines == 3);
  CHECK(to_json(LoadedModel::load(dir.path() / "a").config()) == to_json(saved));
}

}  // TEST_SUITE
