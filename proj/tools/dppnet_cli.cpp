// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API. stdout carries only the JSON result;
// progress and errors go to stderr.
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dppnet/dppnet.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
  dppnet_status status;
  std::string message;
};

[[noreturn]] void raise(dppnet_status status, std::string message) { throw CliError{status, std::move(message)}; }

void check(dppnet_status status) {
  if (status != DPPNET_OK) raise(status, dppnet_last_error());
}

/// Owns a string returned by the library.
struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { dppnet_string_free(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

struct DatasetDeleter {
  void operator()(dppnet_dataset* d) const { dppnet_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(dppnet_model* m) const { dppnet_model_free(m); }
};
using DatasetPtr = std::unique_ptr<dppnet_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<dppnet_model, ModelDeleter>;

DatasetPtr load_dataset(const std::string& path) {
  dppnet_dataset* d = nullptr;
  check(dppnet_dataset_load(path.c_str(), &d));
  return DatasetPtr(d);
}

ModelPtr load_model(const std::string& dir) {
  dppnet_model* m = nullptr;
  check(dppnet_model_load(dir.c_str(), &m));
  return ModelPtr(m);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(DPPNET_ERR_IO, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    raise(DPPNET_ERR_CONFIG, path + ": " + e.what());
  }
}

std::string data_root() {
  const char* env = std::getenv("DPPNET_DATA_ROOT");
  return env && *env ? env : "data/synthetic";
}

std::string in_root(const std::string& explicit_path, const char* file) {
  return explicit_path.empty() ? (fs::path(data_root()) / file).string() : explicit_path;
}

void emit(const std::string& text) { std::cout << text << (text.empty() || text.back() != '\n' ? "\n" : ""); }

// ---------------------------------------------------------------------------

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string precision;
  std::string variant;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, GlobalOptions& g, bool with_out = true) {
  cmd->add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", g.seed, "RNG seed");
  if (with_out) cmd->add_option("--out", g.out, "output directory");
}

struct TrainFlags {
  std::string data_dir, train_path, val_path, pretrained;
  std::optional<std::size_t> max_epochs, patience, batch_size, unfreeze_patience, overfit_epochs;
  std::optional<double> clip, lr, adapter_lr_scale, overfit_gap;
  bool no_unfreeze = false, no_encoder_freeze = false, bucket_by_length = false;
};

int cmd_gen(const GlobalOptions& g) {
  json config = g.config.empty() ? json::object() : read_json(g.config);
  const std::string out = g.out.empty() ? data_root() : g.out;
  OwnedString summary;
  check(dppnet_generate_synthetic(config.dump().c_str(), g.seed.value_or(1), out.c_str(), &summary.ptr));
  emit(summary.str());
  return 0;
}

int cmd_train(const GlobalOptions& g, const TrainFlags& f) {
  json config = g.config.empty() ? json::object() : read_json(g.config);
  if (!config.is_object()) raise(DPPNET_ERR_CONFIG, "run config must be a JSON object");
  json& train = config["train"];
  json& model = config["model"];
  if (train.is_null()) train = json::object();
  if (model.is_null()) model = json::object();
  if (g.seed) config["seed"] = *g.seed;
  if (!g.precision.empty()) config["precision"] = g.precision;
  if (!g.variant.empty()) model["variant"] = g.variant;
  if (!f.pretrained.empty()) config["pretrained_encoder"] = f.pretrained;
  if (f.max_epochs) train["max_epochs"] = *f.max_epochs;
  if (f.patience) train["patience"] = *f.patience;
  if (f.batch_size) train["batch_size"] = *f.batch_size;
  if (f.unfreeze_patience) train["unfreeze_patience"] = *f.unfreeze_patience;
  if (f.overfit_epochs) train["overfit_epochs"] = *f.overfit_epochs;
  if (f.clip) train["clip_threshold"] = *f.clip;
  if (f.lr) train["lr"] = *f.lr;
  if (f.adapter_lr_scale) train["adapter_lr_scale"] = *f.adapter_lr_scale;
  if (f.overfit_gap) train["overfit_gap"] = *f.overfit_gap;
  if (f.no_unfreeze) train["unfreeze_adapter"] = false;
  if (f.no_encoder_freeze) train["freeze_encoder_on_overfit"] = false;
  if (f.bucket_by_length) train["bucket_by_length"] = true;

  const std::string dir = f.data_dir.empty() ? data_root() : f.data_dir;
  const std::string train_path = f.train_path.empty() ? (fs::path(dir) / "train.jsonl").string() : f.train_path;
  const std::string val_path = f.val_path.empty() ? (fs::path(dir) / "val.jsonl").string() : f.val_path;
  if (g.out.empty()) raise(DPPNET_ERR_INVALID_ARGUMENT, "train needs --out DIR");

  const auto train_set = load_dataset(train_path);
  const auto val_set = load_dataset(val_path);
  std::cerr << "training on " << dppnet_dataset_size(train_set.get()) << " examples, validating on "
            << dppnet_dataset_size(val_set.get()) << "\n";
  auto progress = [](const char* line, void*) { std::cerr << line << "\n"; };
  OwnedString summary;
  check(dppnet_train(config.dump().c_str(), train_set.get(), val_set.get(), g.out.c_str(), progress, nullptr,
                     &summary.ptr));
  emit(summary.str());
  return 0;
}

struct EvalFlags {
  std::string checkpoint, predictions, data, taxonomy, multiple_choice;
  std::vector<double> thresholds;
  bool vqa = false, no_vqa = false;
};

json eval_options(const EvalFlags& f) {
  json o = json::object();
  if (!f.thresholds.empty()) o["wups_thresholds"] = f.thresholds;
  if (!f.taxonomy.empty()) o["taxonomy"] = f.taxonomy;
  if (f.vqa) o["vqa"] = true;
  if (f.no_vqa) o["vqa"] = false;
  if (!f.multiple_choice.empty()) o["multiple_choice"] = f.multiple_choice;
  return o;
}

int cmd_eval(const EvalFlags& f) {
  if (f.checkpoint.empty() == f.predictions.empty())
    raise(DPPNET_ERR_INVALID_ARGUMENT, "eval needs exactly one of --checkpoint or --predictions");
  const auto data = load_dataset(in_root(f.data, "test.jsonl"));
  const std::string options = eval_options(f).dump();
  OwnedString report;
  if (!f.checkpoint.empty()) {
    const auto model = load_model(f.checkpoint);
    check(dppnet_model_evaluate(model.get(), data.get(), options.c_str(), &report.ptr));
  } else {
    check(dppnet_evaluate_predictions(f.predictions.c_str(), data.get(), options.c_str(), &report.ptr));
  }
  emit(report.str());
  return 0;
}

struct PredictFlags {
  std::string checkpoint, data, features, question, multiple_choice;
};

int cmd_predict(const PredictFlags& f) {
  const auto model = load_model(f.checkpoint);
  OwnedString out;
  if (!f.question.empty() || !f.features.empty()) {
    if (f.question.empty() || f.features.empty())
      raise(DPPNET_ERR_INVALID_ARGUMENT, "single prediction needs both --features and --question");
    std::vector<double> features;
    try {
      features = json::parse(f.features).get<std::vector<double>>();
    } catch (const json::exception& e) {
      raise(DPPNET_ERR_INVALID_ARGUMENT, std::string("--features must be a JSON array of numbers: ") + e.what());
    }
    check(dppnet_model_predict(model.get(), features.data(), features.size(), f.question.c_str(), &out.ptr));
  } else {
    const auto data = load_dataset(in_root(f.data, "test.jsonl"));
    json options = json::object();
    if (!f.multiple_choice.empty()) options["multiple_choice"] = f.multiple_choice;
    check(dppnet_model_predict_dataset(model.get(), data.get(), options.dump().c_str(), &out.ptr));
  }
  emit(out.str());
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g) {
  const json config = g.config.empty() ? json() : read_json(g.config);
  OwnedString report;
  check(dppnet_gradcheck(config.is_null() ? nullptr : config.dump().c_str(), g.seed.value_or(1), &report.ptr));
  const std::string text = report.str();
  emit(text);
  const json r = json::parse(text);
  if (!r.value("passed", false)) raise(DPPNET_ERR_NUMERIC, "gradient check failed");
  return 0;
}

struct HashFlags {
  std::uint32_t m = 64, n = 64, k = 256;
  std::optional<std::uint64_t> seed_psi, seed_xi;
  bool loads = false;
};

int cmd_hash_stats(const HashFlags& f) {
  json spec = {{"M", f.m}, {"N", f.n}, {"K", f.k}};
  if (f.seed_psi) spec["seed_psi"] = *f.seed_psi;
  if (f.seed_xi) spec["seed_xi"] = *f.seed_xi;
  OwnedString out;
  check(dppnet_hash_stats(spec.dump().c_str(), f.loads ? 1 : 0, &out.ptr));
  emit(out.str());
  return 0;
}

struct RetrieveFlags {
  std::string checkpoint, query, corpus;
  std::size_t top_k = 10;
};

std::vector<std::string> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(DPPNET_ERR_IO, "cannot open corpus " + path);
  std::vector<std::string> out;
  std::string line;
  const bool jsonl = fs::path(path).extension() == ".jsonl";
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!jsonl) {
      out.push_back(line);
      continue;
    }
    try {
      out.push_back(json::parse(line).at("question").get<std::string>());
    } catch (const json::exception& e) {
      raise(DPPNET_ERR_FORMAT, path + ": expected records with a question field: " + e.what());
    }
  }
  return out;
}

int cmd_retrieve(const RetrieveFlags& f) {
  const auto model = load_model(f.checkpoint);
  std::vector<std::string> corpus = read_corpus(f.corpus);
  // identical corpus questions collapse into one entry
  std::vector<std::string> unique;
  for (auto& q : corpus)
    if (std::find(unique.begin(), unique.end(), q) == unique.end()) unique.push_back(std::move(q));
  OwnedString out;
  check(dppnet_model_retrieve(model.get(), f.query.c_str(), json(unique).dump().c_str(), f.top_k, &out.ptr));
  emit(out.str());
  return 0;
}

int cmd_probe(const GlobalOptions& g, const std::string& data_dir) {
  const std::string dir = data_dir.empty() ? data_root() : data_dir;
  const auto train = load_dataset((fs::path(dir) / "train.jsonl").string());
  const auto test = load_dataset((fs::path(dir) / "test.jsonl").string());
  OwnedString out;
  check(dppnet_linear_probe(train.get(), test.get(), g.seed.value_or(1), &out.ptr));
  emit(out.str());
  return 0;
}

void print_error(dppnet_status status, const std::string& message) {
  std::cerr << json{{"error", {{"code", dppnet_status_name(status)}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic parameter prediction network: data generation, training, evaluation and diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dppnet_version());

  GlobalOptions g;
  TrainFlags tf;
  EvalFlags ef;
  PredictFlags pf;
  HashFlags hf;
  RetrieveFlags rf;
  std::string probe_data;

  auto* gen = app.add_subcommand("gen", "generate the synthetic question-answering splits");
  add_common(gen, g);

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint directory");
  add_common(train, g);
  train->add_option("--precision", g.precision, "scalar width")->check(CLI::IsMember({"f32", "f64"}));
  train->add_option("--variant", g.variant, "model variant")
      ->check(CLI::IsMember({"dppnet", "concat", "cnn-fixed", "rand-gru"}));
  train->add_option("--data", tf.data_dir, "directory holding train.jsonl and val.jsonl");
  train->add_option("--train", tf.train_path, "training set (JSON-lines)");
  train->add_option("--val", tf.val_path, "validation set (JSON-lines)");
  train->add_option("--pretrained", tf.pretrained, "pretrained encoder directory");
  train->add_option("--max-epochs", tf.max_epochs);
  train->add_option("--patience", tf.patience);
  train->add_option("--batch-size", tf.batch_size);
  train->add_option("--unfreeze-patience", tf.unfreeze_patience);
  train->add_option("--overfit-epochs", tf.overfit_epochs);
  train->add_option("--clip", tf.clip, "global gradient-norm threshold");
  train->add_option("--lr", tf.lr);
  train->add_option("--adapter-lr-scale", tf.adapter_lr_scale);
  train->add_option("--overfit-gap", tf.overfit_gap);
  train->add_flag("--no-unfreeze", tf.no_unfreeze, "keep the feature adapter frozen");
  train->add_flag("--no-encoder-freeze", tf.no_encoder_freeze, "never freeze the question encoder");
  train->add_flag("--bucket-by-length", tf.bucket_by_length, "batch only questions of equal length");

  auto* eval = app.add_subcommand("eval", "score a checkpoint or a predictions file");
  eval->add_option("--checkpoint", ef.checkpoint, "checkpoint directory");
  eval->add_option("--predictions", ef.predictions, "predictions file ({id, answer} per line)");
  eval->add_option("--data", ef.data, "dataset (JSON-lines)");
  eval->add_option("--wups-threshold", ef.thresholds, "WUPS threshold, repeatable")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--taxonomy", ef.taxonomy, "taxonomy file (child parent per line)")->check(CLI::ExistingFile);
  eval->add_flag("--vqa-consensus", ef.vqa, "report consensus accuracy");
  eval->add_flag("--no-vqa-consensus", ef.no_vqa, "omit consensus accuracy");
  eval->add_option("--multiple-choice", ef.multiple_choice, "candidate answers per id")->check(CLI::ExistingFile);

  auto* predict = app.add_subcommand("predict", "predict answers as JSON-lines");
  predict->add_option("--checkpoint", pf.checkpoint)->required();
  predict->add_option("--data", pf.data, "dataset (JSON-lines)");
  predict->add_option("--features", pf.features, "feature vector as a JSON array");
  predict->add_option("--question", pf.question);
  predict->add_option("--multiple-choice", pf.multiple_choice)->check(CLI::ExistingFile);

  auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference oracle suite");
  add_common(gradcheck, g, false);

  auto* hash = app.add_subcommand("hash-stats", "bucket and sign statistics of the weight hashing");
  hash->add_option("-M,--rows", hf.m, "dynamic layer output size")->check(CLI::PositiveNumber);
  hash->add_option("-N,--cols", hf.n, "dynamic layer input size")->check(CLI::PositiveNumber);
  hash->add_option("-K,--candidates", hf.k, "candidate weight count")->check(CLI::PositiveNumber);
  hash->add_option("--seed-psi", hf.seed_psi);
  hash->add_option("--seed-xi", hf.seed_xi);
  hash->add_flag("--loads", hf.loads, "include per-bucket loads");

  auto* retrieve = app.add_subcommand("retrieve", "rank corpus questions by encoder cosine similarity");
  retrieve->add_option("--checkpoint", rf.checkpoint)->required();
  retrieve->add_option("--query", rf.query)->required();
  retrieve->add_option("--corpus", rf.corpus, "dataset (.jsonl) or one question per line")->required();
  retrieve->add_option("--top-k", rf.top_k)->check(CLI::PositiveNumber);

  auto* probe = app.add_subcommand("probe", "feature-only linear baseline on train/test splits");
  add_common(probe, g, false);
  probe->add_option("--data", probe_data, "directory holding train.jsonl and test.jsonl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(DPPNET_ERR_INVALID_ARGUMENT, e.what());
    return DPPNET_ERR_INVALID_ARGUMENT;
  }

  try {
    if (*gen) return cmd_gen(g);
    if (*train) return cmd_train(g, tf);
    if (*eval) return cmd_eval(ef);
    if (*predict) return cmd_predict(pf);
    if (*gradcheck) return cmd_gradcheck(g);
    if (*hash) return cmd_hash_stats(hf);
    if (*retrieve) return cmd_retrieve(rf);
    if (*probe) return cmd_probe(g, probe_data);
  } catch (const CliError& e) {
    print_error(e.status, e.message);
    return e.status;
  } catch (const std::exception& e) {
    print_error(DPPNET_ERR_INTERNAL, e.what());
    return DPPNET_ERR_INTERNAL;
  }
  return 0;
}
