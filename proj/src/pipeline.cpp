// SPDX-License-Identifier: Apache-2.0
#include "dppnet/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dppnet/checkpoint.hpp"

namespace dppnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelKind = "dppnet-model";

template <typename T>
using ModelPtr = std::unique_ptr<Model<T>>;

json tokens_json(const std::vector<std::string>& tokens) { return json(tokens); }

std::vector<std::string> read_string_list(const fs::path& path, const char* key) {
  const json j = read_json_file(path);
  try {
    return j.at(key).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, path.string() + ": expected {\"" + key + "\": [...]}: " + e.what());
  }
}

std::vector<std::string> distinct_answers(const QAExample& ex) {
  std::vector<std::string> out;
  for (const auto& a : ex.answers) {
    std::string n = normalize_answer(a);
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(std::move(n));
  }
  return out;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  model.init_seed = seed;
  schedule.seed = seed;
}

TrainSchedule RunConfig::effective_schedule() const {
  TrainSchedule s = schedule;
  if (model.variant != Variant::Dppnet) s.unfreeze_adapter = false;
  return s;
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.schedule)},
          {"precision", precision_name(c.precision)},
          {"pretrained_encoder", c.pretrained_encoder}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  require(j.is_object(), ErrorCode::Config, "run config must be a JSON object");
  static const std::set<std::string> known = {"model", "train", "precision", "pretrained_encoder", "seed"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorCode::Config, "unknown run config field '" + key + "'");
  if (j.contains("model")) {
    json merged = to_json(c.model);
    merged.update(j.at("model"));
    c.model = model_config_from_json(merged);
  }
  if (j.contains("train")) c.schedule = train_schedule_from_json(j.at("train"), c.schedule);
  try {
    if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
    if (j.contains("pretrained_encoder")) c.pretrained_encoder = j.at("pretrained_encoder").get<std::string>();
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed run config: ") + e.what());
  }
  return c;
}

namespace {

template <typename T>
void adopt_pretrained(Model<T>& model, const EncoderWeights<T>& weights, const Vocabulary& vocab) {
  GruParams<T>& gru = model.gru();
  require(gru.has_bias == weights.gru.has_bias, ErrorCode::Config,
          "pretrained encoder gru_bias does not match the model config");
  gru = weights.gru;
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < weights.vocabulary.size(); ++i) rows.emplace(weights.vocabulary[i], i);
  Tensor<T>& table = model.embedding();
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const auto it = rows.find(vocab.tokens()[id]);
    if (it == rows.end()) continue;
    auto src = weights.embedding.row(it->second);
    std::copy(src.begin(), src.end(), table.row(id).begin());
  }
}

template <typename T>
json train_typed(RunConfig cfg, const VocabBuild& vb, const Dataset& train_set, const Dataset& val_set,
                 const fs::path& out_dir, const EpochCallback& on_epoch) {
  auto model = std::make_unique<Model<T>>(cfg.model);
  if (!cfg.pretrained_encoder.empty() && cfg.model.variant != Variant::RandGru) {
    const auto weights = load_pretrained<T>(cfg.pretrained_encoder, cfg.model.embed, cfg.model.hidden);
    adopt_pretrained(*model, weights, vb.vocab);
  }
  cfg.model = model->config();

  const auto train_enc = encode_dataset<T>(train_set, vb.vocab, vb.answers);
  const auto val_enc = encode_dataset<T>(val_set, vb.vocab, vb.answers);

  fs::create_directories(out_dir);
  write_json_file(out_dir / kRunConfigFile, to_json(cfg));
  write_json_file(out_dir / kVocabFile, {{"tokens", tokens_json(vb.vocab.tokens())}});
  write_json_file(out_dir / kAnswersFile, {{"answers", tokens_json(vb.answers.answers())}});

  std::ofstream log(out_dir / kTrainLogFile, std::ios::trunc);
  require(log.good(), ErrorCode::Io, "cannot write " + (out_dir / kTrainLogFile).string());
  const TrainResult result = train(*model, train_enc, val_enc, cfg.effective_schedule(), [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
    if (on_epoch) on_epoch(e);
  });

  json meta = {{"kind", kModelKind}, {"hash", to_json(cfg.model.hash_spec())},
               {"variant", variant_name(cfg.model.variant)}};
  save_tensors(out_dir, model->params(), meta);

  json summary = to_json(result);
  summary["variant"] = variant_name(cfg.model.variant);
  summary["precision"] = precision_name(cfg.precision);
  summary["parameter_count"] = model->parameter_count();
  summary["dppnet_parameter_count"] = dppnet_parameter_count(cfg.model);
  summary["concat_parameter_count"] =
      concat_parameter_count(cfg.model, cfg.model.concat_hidden ? cfg.model.concat_hidden
                                                                 : matched_concat_hidden(cfg.model));
  summary["train_examples"] = train_set.size();
  summary["val_examples"] = val_set.size();
  summary["checkpoint"] = out_dir.string();
  write_json_file(out_dir / kSummaryFile, summary);
  return summary;
}

}  // namespace

json train_run(const RunConfig& config, const Dataset& train_set, const Dataset& val_set,
               const fs::path& out_dir, const EpochCallback& on_epoch) {
  require(!train_set.empty(), ErrorCode::InvalidArgument, "training set is empty");
  require(!val_set.empty(), ErrorCode::InvalidArgument, "validation set is empty");
  require(val_set.feature_dim == train_set.feature_dim, ErrorCode::ShapeMismatch,
          "validation features have F=" + std::to_string(val_set.feature_dim) + " but training has F=" +
              std::to_string(train_set.feature_dim));
  RunConfig cfg = config;
  if (cfg.model.feature_dim == 0) cfg.model.feature_dim = train_set.feature_dim;
  require(cfg.model.feature_dim == train_set.feature_dim, ErrorCode::Config,
          "config feature_dim " + std::to_string(cfg.model.feature_dim) + " does not match data F=" +
              std::to_string(train_set.feature_dim));
  const VocabBuild vb = build_vocab(train_set);
  cfg.model.num_answers = vb.answers.size();
  cfg.model.vocab_size = vb.vocab.size();
  cfg.schedule.validate();

  if (cfg.precision == Precision::F64) return train_typed<double>(cfg, vb, train_set, val_set, out_dir, on_epoch);
  return train_typed<float>(cfg, vb, train_set, val_set, out_dir, on_epoch);
}

EvalOptions eval_options_from_json(const json& j) {
  EvalOptions o;
  if (j.is_null()) return o;
  require(j.is_object(), ErrorCode::Config, "eval options must be a JSON object");
  try {
    if (j.contains("wups_thresholds")) o.wups_thresholds = j.at("wups_thresholds").get<std::vector<double>>();
    if (j.contains("taxonomy")) o.taxonomy = j.at("taxonomy").get<std::string>();
    if (j.contains("vqa") && !j.at("vqa").is_null()) o.vqa = j.at("vqa").get<bool>();
    if (j.contains("multiple_choice")) o.multiple_choice = j.at("multiple_choice").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed eval options: ") + e.what());
  }
  for (double t : o.wups_thresholds)
    require(t >= 0.0 && t <= 1.0, ErrorCode::Config, "WUPS thresholds must lie in [0, 1]");
  return o;
}

json to_json(const Prediction& p) {
  return {{"id", p.id}, {"answer", p.answer}, {"class", p.cls}, {"confidence", p.confidence}};
}

namespace {

std::vector<json> read_jsonl_records(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    require(out.back().is_object() && out.back().contains("id"), ErrorCode::Format,
            path.string() + ":" + std::to_string(line_no) + ": record needs an id");
  }
  return out;
}

std::string id_string(const json& id) { return id.is_string() ? id.get<std::string>() : id.dump(); }

}  // namespace

CandidateMask load_candidate_mask(const fs::path& path) {
  CandidateMask mask;
  for (const json& rec : read_jsonl_records(path)) {
    try {
      mask[id_string(rec.at("id"))] = rec.at("candidates").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, path.string() + ": candidate record needs {id, candidates:[...]}: " + e.what());
    }
  }
  return mask;
}

std::string example_key(const Dataset& data, std::size_t index) {
  const std::string& id = data.examples.at(index).id;
  return id.empty() ? std::to_string(index) : id;
}

LoadedModel LoadedModel::load(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::Io, "checkpoint directory not found: " + dir.string());
  LoadedModel lm;
  lm.config_ = run_config_from_json(read_json_file(dir / kRunConfigFile));
  lm.vocab_ = Vocabulary(read_string_list(dir / kVocabFile, "tokens"));
  lm.answers_ = AnswerSpace(read_string_list(dir / kAnswersFile, "answers"));
  const ModelConfig& mc = lm.config_.model;
  require(mc.vocab_size == lm.vocab_.size(), ErrorCode::Config,
          "vocabulary has " + std::to_string(lm.vocab_.size()) + " tokens but the config says " +
              std::to_string(mc.vocab_size));
  require(mc.num_answers == lm.answers_.size(), ErrorCode::Config,
          "answer space has " + std::to_string(lm.answers_.size()) + " classes but the config says " +
              std::to_string(mc.num_answers));

  const LoadedTensors tensors = load_tensors(dir);
  require(tensors.metadata.value("kind", std::string()) == kModelKind, ErrorCode::Format,
          dir.string() + " is not a model checkpoint");
  if (tensors.metadata.contains("hash")) {
    const HashSpec saved = hash_spec_from_json(tensors.metadata.at("hash"));
    const HashSpec expected = mc.hash_spec();
    require(saved.candidates == expected.candidates, ErrorCode::Config,
            "checkpoint K=" + std::to_string(saved.candidates) + " conflicts with config K=" +
                std::to_string(expected.candidates));
    require(saved.rows == expected.rows && saved.cols == expected.cols &&
                saved.seed_psi == expected.seed_psi && saved.seed_xi == expected.seed_xi,
            ErrorCode::Config, "checkpoint hash spec conflicts with its run config");
  }
  if (lm.config_.precision == Precision::F64) {
    auto m = std::make_unique<Model<double>>(mc);
    apply_tensors(tensors, m->params());
    lm.model_ = std::move(m);
  } else {
    auto m = std::make_unique<Model<float>>(mc);
    apply_tensors(tensors, m->params());
    lm.model_ = std::move(m);
  }
  return lm;
}

std::size_t LoadedModel::parameter_count() const {
  return std::visit([](const auto& m) { return m->parameter_count(); }, model_);
}

namespace {

template <typename T>
std::vector<std::size_t> allowed_classes(const AnswerSpace& answers, const std::vector<std::string>& candidates) {
  std::vector<std::size_t> out;
  for (const auto& c : candidates)
    if (auto cls = answers.find(c)) out.push_back(*cls);
  return out;
}

template <typename T>
std::vector<Prediction> predict_typed(const Model<T>& model, const Vocabulary& vocab, const AnswerSpace& answers,
                                      const Dataset& data, const CandidateMask* mask) {
  require(data.feature_dim == model.config().feature_dim, ErrorCode::ShapeMismatch,
          "dataset has F=" + std::to_string(data.feature_dim) + " but the model expects F=" +
              std::to_string(model.config().feature_dim));
  std::vector<Prediction> out;
  out.reserve(data.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    Batch<T> batch;
    batch.features = Tensor<T>({end - start, data.feature_dim});
    for (std::size_t i = start; i < end; ++i) {
      const QAExample& ex = data.examples[i];
      auto row = batch.features.row(i - start);
      for (std::size_t j = 0; j < ex.features.size(); ++j) row[j] = static_cast<T>(ex.features[j]);
      TokenSeq q = vocab.encode_question(ex.question);
      require(!q.empty(), ErrorCode::InvalidArgument,
              "example '" + example_key(data, i) + "' has a question with no tokens");
      batch.questions.push_back(std::move(q));
    }
    const auto result = model.forward(batch, Mode::Eval);
    for (std::size_t i = start; i < end; ++i) {
      std::vector<std::size_t> allowed;
      if (mask) {
        const auto it = mask->find(example_key(data, i));
        if (it != mask->end()) allowed = allowed_classes<T>(answers, it->second);
      }
      const auto probs = result.probs.row(i - start);
      const std::size_t cls = Model<T>::argmax(probs, allowed.empty() ? nullptr : &allowed);
      out.push_back({example_key(data, i), answers.answer(cls), cls, static_cast<double>(probs[cls])});
    }
  }
  return out;
}

}  // namespace

Prediction LoadedModel::predict(std::span<const double> features, const std::string& question) const {
  Dataset one;
  one.feature_dim = features.size();
  QAExample ex;
  ex.id = "0";
  ex.features.assign(features.begin(), features.end());
  ex.question = question;
  one.examples.push_back(std::move(ex));
  return predict_dataset(one).front();
}

std::vector<Prediction> LoadedModel::predict_dataset(const Dataset& data, const CandidateMask* mask) const {
  return std::visit([&](const auto& m) { return predict_typed(*m, vocab_, answers_, data, mask); }, model_);
}

json evaluate_answer_sets(const std::vector<std::vector<std::string>>& predicted, const Dataset& data,
                          const EvalOptions& options) {
  require(predicted.size() == data.size(), ErrorCode::ShapeMismatch, "one prediction set per example is required");
  std::vector<std::string> firsts, truths;
  std::vector<std::vector<std::string>> annotators;
  std::vector<EvalRecord> records;
  bool multi = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const QAExample& ex = data.examples[i];
    firsts.push_back(predicted[i].empty() ? std::string() : predicted[i].front());
    truths.push_back(ex.primary_answer());
    annotators.push_back(ex.answers);
    records.push_back({predicted[i], distinct_answers(ex)});
    multi = multi || ex.answers.size() > 1;
  }
  json report = {{"examples", data.size()}, {"accuracy", plain_accuracy(firsts, truths)}};
  if (options.vqa.value_or(multi)) report["vqa_accuracy"] = vqa_accuracy(firsts, annotators);
  if (!options.taxonomy.empty()) {
    const Taxonomy taxonomy = Taxonomy::load(options.taxonomy);
    json wups_list = json::array();
    for (double t : options.wups_thresholds) wups_list.push_back(to_json(wups(records, taxonomy, t), t));
    report["wups"] = wups_list;
  }
  return report;
}

json LoadedModel::evaluate(const Dataset& data, const EvalOptions& options) const {
  require(!data.empty(), ErrorCode::InvalidArgument, "evaluation set is empty");
  CandidateMask mask;
  if (!options.multiple_choice.empty()) mask = load_candidate_mask(options.multiple_choice);
  const auto preds = predict_dataset(data, options.multiple_choice.empty() ? nullptr : &mask);
  std::vector<std::vector<std::string>> sets;
  std::size_t unknown = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sets.push_back({preds[i].answer});
    unknown += !answers_.find(data.examples[i].primary_answer()).has_value();
  }
  json report = evaluate_answer_sets(sets, data, options);
  report["unknown_answers"] = unknown;
  report["multiple_choice"] = !options.multiple_choice.empty();
  report["variant"] = variant_name(config_.model.variant);
  return report;
}

json evaluate_prediction_file(const fs::path& predictions, const Dataset& data, const EvalOptions& options) {
  require(!data.empty(), ErrorCode::InvalidArgument, "evaluation set is empty");
  std::unordered_map<std::string, std::vector<std::string>> by_id;
  for (const json& rec : read_jsonl_records(predictions)) {
    std::vector<std::string> answers;
    try {
      if (rec.contains("answers")) answers = rec.at("answers").get<std::vector<std::string>>();
      else answers = {rec.at("answer").get<std::string>()};
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, predictions.string() + ": prediction needs answer or answers: " + e.what());
    }
    by_id[id_string(rec.at("id"))] = std::move(answers);
  }
  std::vector<std::vector<std::string>> sets;
  std::size_t missing = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto it = by_id.find(example_key(data, i));
    if (it == by_id.end()) {
      ++missing;
      sets.emplace_back();
    } else {
      sets.push_back(it->second);
    }
  }
  json report = evaluate_answer_sets(sets, data, options);
  report["missing_predictions"] = missing;
  return report;
}

json LoadedModel::retrieve(const std::string& query, const std::vector<std::string>& corpus,
                           std::size_t top_k) const {
  require(!corpus.empty(), ErrorCode::InvalidArgument, "retrieval corpus is empty");
  auto encode = [&](const std::string& q) {
    TokenSeq t = vocab_.encode_question(q);
    require(!t.empty(), ErrorCode::InvalidArgument, "question has no tokens: \"" + q + "\"");
    return t;
  };
  const TokenSeq q = encode(query);
  std::vector<TokenSeq> seqs;
  for (const auto& c : corpus) seqs.push_back(encode(c));
  json out = json::array();
  std::visit(
      [&](const auto& m) {
        const auto hits = m->retrieve_similar(q, seqs, top_k);
        for (std::size_t r = 0; r < hits.size(); ++r)
          out.push_back({{"rank", r + 1},
                         {"index", hits[r].index},
                         {"question", corpus[hits[r].index]},
                         {"similarity", static_cast<double>(hits[r].similarity)}});
      },
      model_);
  return out;
}

}  // namespace dppnet
