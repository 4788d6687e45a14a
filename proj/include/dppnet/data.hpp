// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dppnet/encoder.hpp"

namespace dppnet {

/// Lowercase, split on whitespace, strip leading/trailing punctuation from
/// each token, drop empties. Internal punctuation ("what's") is kept.
std::vector<std::string> tokenize(std::string_view question);

/// Lowercase, trim, collapse internal whitespace.
std::string normalize_answer(std::string_view answer);

struct QAExample {
  std::string id;
  std::int64_t scene = -1;
  std::string question_type;  // optional template tag
  std::vector<double> features;
  std::string question;
  std::vector<std::string> answers;  // 1 for single-answer sets, 10 for VQA-style

  /// Most frequent normalised answer; ties go to the earliest.
  std::string primary_answer() const;
  bool operator==(const QAExample&) const = default;
};

struct Dataset {
  std::size_t feature_dim = 0;
  std::vector<QAExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  bool operator==(const Dataset&) const = default;
};

nlohmann::json to_json(const QAExample& ex);

/// One record per line: {features:[...], question:"...", answers:[...]} plus
/// optional id, scene, type. Blank lines are skipped.
Dataset load_jsonl(const std::filesystem::path& path);
Dataset parse_jsonl(std::string_view text, const std::string& source = "<memory>");
void save_jsonl(const std::filesystem::path& path, const Dataset& data);

inline constexpr TokenId kUnkId = 0;
inline constexpr const char* kUnkToken = "<unk>";

class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // tokens[0] must be <unk>

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  TokenId id(std::string_view token) const;  // kUnkId when unknown
  bool contains(std::string_view token) const;
  TokenSeq encode(const std::vector<std::string>& tokens) const;
  TokenSeq encode_question(std::string_view question) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

class AnswerSpace {
 public:
  AnswerSpace() = default;
  explicit AnswerSpace(std::vector<std::string> answers);

  std::size_t size() const { return answers_.size(); }
  const std::vector<std::string>& answers() const { return answers_; }
  const std::string& answer(std::size_t cls) const { return answers_.at(cls); }
  std::optional<std::size_t> find(std::string_view answer) const;

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct VocabBuild {
  Vocabulary vocab;
  AnswerSpace answers;
};

/// Every token of the training questions gets an id (sorted order after
/// <unk>); every distinct primary answer becomes one class (sorted order).
VocabBuild build_vocab(const Dataset& train);

// ---------------------------------------------------------------------------
// Synthetic compositional QA

enum class QuestionTemplate { ColorOf, ShapeOf, CountOf, Exists };
inline constexpr std::array<const char*, 4> kTemplateNames = {"color", "shape", "count", "exists"};

struct SyntheticConfig {
  std::size_t slots = 2;
  std::size_t shapes = 4;
  std::size_t colors = 4;
  std::size_t max_count = 3;
  std::size_t train_size = 4000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  double noise = 0.05;
  std::array<double, 4> template_weights = {1.0, 1.0, 1.0, 1.0};

  void validate() const;
  std::size_t feature_dim() const { return slots * (shapes + colors + max_count); }
};

nlohmann::json to_json(const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

const std::vector<std::string>& shape_names();
const std::vector<std::string>& color_names();

struct SceneSlot {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::size_t count = 1;  // 1..max_count
};

/// Feature encoding of a scene: per slot [shape one-hot | color one-hot |
/// count one-hot], no noise.
std::vector<double> encode_scene(const std::vector<SceneSlot>& scene, const SyntheticConfig& config);

struct SyntheticSplits {
  Dataset train, val, test;
};

/// One question per scene; scene ids are unique across the three splits.
SyntheticSplits generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace dppnet
