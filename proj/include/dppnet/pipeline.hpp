// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dppnet/data.hpp"
#include "dppnet/metrics.hpp"
#include "dppnet/model.hpp"
#include "dppnet/trainer.hpp"

namespace dppnet {

/// Everything needed to re-run a training job. Copied into every checkpoint.
struct RunConfig {
  ModelConfig model;
  TrainSchedule schedule;
  Precision precision = Precision::F32;
  std::string pretrained_encoder;  // directory; empty for random init

  /// Sets both the initialisation and the shuffling seed.
  void set_seed(std::uint64_t seed);
  /// Schedule after variant rules: only DPPnet ever unfreezes the adapter.
  TrainSchedule effective_schedule() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

inline constexpr const char* kRunConfigFile = "run_config.json";
inline constexpr const char* kVocabFile = "vocab.json";
inline constexpr const char* kAnswersFile = "answers.json";
inline constexpr const char* kTrainLogFile = "train_log.jsonl";
inline constexpr const char* kSummaryFile = "summary.json";

/// Trains a model and writes the checkpoint directory: tensors, run config,
/// vocabulary, answers, per-epoch log and a summary (also returned).
nlohmann::json train_run(const RunConfig& config, const Dataset& train_set, const Dataset& val_set,
                         const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

struct EvalOptions {
  std::vector<double> wups_thresholds = {0.9, 0.0};
  std::string taxonomy;           // WUPS is reported only with a taxonomy
  std::optional<bool> vqa;        // default: on when any example has >1 answers
  std::string multiple_choice;    // JSON-lines {id, candidates:[...]}
};

EvalOptions eval_options_from_json(const nlohmann::json& j);

struct Prediction {
  std::string id;
  std::string answer;
  std::size_t cls = 0;
  double confidence = 0.0;
};

nlohmann::json to_json(const Prediction& p);

/// Candidate answers per example id, for multiple-choice evaluation.
using CandidateMask = std::unordered_map<std::string, std::vector<std::string>>;
CandidateMask load_candidate_mask(const std::filesystem::path& path);

class LoadedModel {
 public:
  static LoadedModel load(const std::filesystem::path& dir);

  const RunConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnswerSpace& answers() const { return answers_; }
  Precision precision() const { return config_.precision; }
  std::size_t parameter_count() const;

  Prediction predict(std::span<const double> features, const std::string& question) const;
  std::vector<Prediction> predict_dataset(const Dataset& data, const CandidateMask* mask = nullptr) const;
  nlohmann::json evaluate(const Dataset& data, const EvalOptions& options) const;
  nlohmann::json retrieve(const std::string& query, const std::vector<std::string>& corpus,
                          std::size_t top_k) const;

  template <typename T>
  const Model<T>* get() const {
    const auto* p = std::get_if<std::unique_ptr<Model<T>>>(&model_);
    return p ? p->get() : nullptr;
  }

 private:
  RunConfig config_;
  Vocabulary vocab_;
  AnswerSpace answers_;
  std::variant<std::unique_ptr<Model<float>>, std::unique_ptr<Model<double>>> model_;
};

/// Example key used to join predictions with a dataset: its id, or its
/// zero-based position when the id is empty.
std::string example_key(const Dataset& data, std::size_t index);

/// Metric report for predicted answer sets aligned with `data.examples`.
nlohmann::json evaluate_answer_sets(const std::vector<std::vector<std::string>>& predicted,
                                    const Dataset& data, const EvalOptions& options);
/// Scores a predictions file ({id, answer} or {id, answers}) against a dataset.
nlohmann::json evaluate_prediction_file(const std::filesystem::path& predictions, const Dataset& data,
                                        const EvalOptions& options);

/// Finite-difference oracle suite over every differentiable operation and
/// the full models at toy dimensions; 64-bit throughout.
nlohmann::json run_gradcheck(const nlohmann::json& config, std::uint64_t seed);

/// Toy dimensions used by the end-to-end gradient check.
ModelConfig gradcheck_model_config();

}  // namespace dppnet
