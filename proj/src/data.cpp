// SPDX-License-Identifier: Apache-2.0
#include "dppnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dppnet/random.hpp"

namespace dppnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view question) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < question.size()) {
    while (i < question.size() && is_space(question[i])) ++i;
    std::size_t j = i;
    while (j < question.size() && !is_space(question[j])) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_punct(question[b])) ++b;
    while (e > b && is_punct(question[e - 1])) --e;
    if (b < e) {
      std::string tok(question.substr(b, e - b));
      std::transform(tok.begin(), tok.end(), tok.begin(), lower);
      tokens.push_back(std::move(tok));
    }
    i = j;
  }
  return tokens;
}

std::string normalize_answer(std::string_view answer) {
  std::string out;
  bool pending_space = false;
  for (char c : answer) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower(c));
  }
  return out;
}

std::string QAExample::primary_answer() const {
  std::string best;
  std::size_t best_count = 0;
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) {
    const std::string n = normalize_answer(a);
    const std::size_t c = ++counts[n];
    if (c > best_count) {
      best_count = c;
      best = n;
    }
  }
  // ties keep the earliest answer to reach the maximum
  for (const auto& a : answers) {
    const std::string n = normalize_answer(a);
    if (counts[n] == best_count) return n;
  }
  return best;
}

json to_json(const QAExample& ex) {
  json j;
  if (!ex.id.empty()) j["id"] = ex.id;
  if (ex.scene >= 0) j["scene"] = ex.scene;
  if (!ex.question_type.empty()) j["type"] = ex.question_type;
  j["features"] = ex.features;
  j["question"] = ex.question;
  j["answers"] = ex.answers;
  return j;
}

Dataset parse_jsonl(std::string_view text, const std::string& source) {
  Dataset data;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (std::all_of(line.begin(), line.end(), is_space)) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, where + ": malformed JSON (" + e.what() + ")");
    }
    require(rec.is_object(), ErrorCode::Format, where + ": record must be a JSON object");
    QAExample ex;
    try {
      for (const char* field : {"features", "question", "answers"})
        require(rec.contains(field), ErrorCode::Format,
                where + ": missing field '" + field + "'");
      ex.features = rec.at("features").get<std::vector<double>>();
      ex.question = rec.at("question").get<std::string>();
      ex.answers = rec.at("answers").get<std::vector<std::string>>();
      if (rec.contains("id"))
        ex.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
      ex.scene = rec.value("scene", std::int64_t{-1});
      ex.question_type = rec.value("type", std::string());
    } catch (const json::exception& e) {
      fail(ErrorCode::Format, where + ": bad field type (" + e.what() + ")");
    }
    require(!ex.answers.empty(), ErrorCode::Format, where + ": answers must be nonempty");
    require(!ex.features.empty(), ErrorCode::Format, where + ": features must be nonempty");
    if (data.examples.empty()) {
      data.feature_dim = ex.features.size();
    } else {
      require(ex.features.size() == data.feature_dim, ErrorCode::Format,
              where + ": feature length " + std::to_string(ex.features.size()) +
                  " differs from the dataset's " + std::to_string(data.feature_dim));
    }
    if (ex.id.empty()) ex.id = std::to_string(data.examples.size());
    data.examples.push_back(std::move(ex));
    if (end == text.size()) break;
  }
  return data;
}

Dataset load_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open dataset '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), path.string());
}

void save_jsonl(const fs::path& path, const Dataset& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot write dataset '" + path.string() + "'");
  for (const auto& ex : data.examples) out << to_json(ex).dump() << '\n';
  require(out.good(), ErrorCode::Io, "failed writing '" + path.string() + "'");
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{kUnkToken}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  require(!tokens_.empty() && tokens_[0] == kUnkToken, ErrorCode::Format,
          "vocabulary must start with the reserved <unk> token");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const bool inserted = index_.emplace(tokens_[i], static_cast<TokenId>(i)).second;
    require(inserted, ErrorCode::Format, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenSeq ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenSeq Vocabulary::encode_question(std::string_view question) const {
  return encode(tokenize(question));
}

AnswerSpace::AnswerSpace(std::vector<std::string> answers) : answers_(std::move(answers)) {
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    const bool inserted = index_.emplace(answers_[i], i).second;
    require(inserted, ErrorCode::Format, "duplicate answer class '" + answers_[i] + "'");
  }
}

std::optional<std::size_t> AnswerSpace::find(std::string_view answer) const {
  auto it = index_.find(normalize_answer(answer));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

VocabBuild build_vocab(const Dataset& train) {
  std::set<std::string> tokens, answers;
  for (const auto& ex : train.examples) {
    for (auto& t : tokenize(ex.question)) tokens.insert(std::move(t));
    answers.insert(ex.primary_answer());
  }
  tokens.erase(kUnkToken);
  std::vector<std::string> vocab{kUnkToken};
  vocab.insert(vocab.end(), tokens.begin(), tokens.end());
  return {Vocabulary(std::move(vocab)), AnswerSpace({answers.begin(), answers.end()})};
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names = {"square",  "circle", "triangle", "star",
                                                 "hexagon", "cross",  "heart",    "diamond"};
  return names;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red",    "green",  "blue",  "yellow",
                                                 "purple", "orange", "white", "black"};
  return names;
}

void SyntheticConfig::validate() const {
  require(slots >= 1, ErrorCode::Config, "synthetic config needs at least one slot");
  require(shapes <= shape_names().size() && colors <= color_names().size(), ErrorCode::Config,
          "synthetic config supports at most " + std::to_string(shape_names().size()) +
              " shapes and " + std::to_string(color_names().size()) + " colors");
  require(shapes * colors >= 2, ErrorCode::Config, "synthetic config needs shapes*colors >= 2");
  require(slots <= shapes, ErrorCode::Config,
          "synthetic config asks for " + std::to_string(slots) + " slots but only " +
              std::to_string(shapes) + " distinct shapes");
  require(slots <= colors, ErrorCode::Config,
          "synthetic config asks for " + std::to_string(slots) + " slots but only " +
              std::to_string(colors) + " distinct colors");
  require(max_count >= 1 && max_count <= 9, ErrorCode::Config, "max_count must be in 1..9");
  require(noise >= 0.0, ErrorCode::Config, "noise must be non-negative");
  double total = 0.0;
  for (double w : template_weights) {
    require(w >= 0.0, ErrorCode::Config, "template weights must be non-negative");
    total += w;
  }
  require(total > 0.0, ErrorCode::Config, "at least one template weight must be positive");
  // "is there a <color> <shape>" needs an absent pair for its "no" answers
  require(template_weights[3] == 0.0 || shapes * colors > slots, ErrorCode::Config,
          "exists template needs more shape/color pairs than slots");
}

json to_json(const SyntheticConfig& c) {
  return {{"slots", c.slots},           {"shapes", c.shapes},       {"colors", c.colors},
          {"max_count", c.max_count},   {"train_size", c.train_size}, {"val_size", c.val_size},
          {"test_size", c.test_size},   {"noise", c.noise},
          {"template_weights", c.template_weights}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  try {
    c.slots = j.value("slots", c.slots);
    c.shapes = j.value("shapes", c.shapes);
    c.colors = j.value("colors", c.colors);
    c.max_count = j.value("max_count", c.max_count);
    c.train_size = j.value("train_size", c.train_size);
    c.val_size = j.value("val_size", c.val_size);
    c.test_size = j.value("test_size", c.test_size);
    c.noise = j.value("noise", c.noise);
    if (j.contains("template_weights"))
      c.template_weights = j.at("template_weights").get<std::array<double, 4>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> encode_scene(const std::vector<SceneSlot>& scene, const SyntheticConfig& c) {
  require(scene.size() == c.slots, ErrorCode::InvalidArgument, "scene slot count mismatch");
  std::vector<double> f(c.feature_dim(), 0.0);
  const std::size_t width = c.shapes + c.colors + c.max_count;
  for (std::size_t s = 0; s < scene.size(); ++s) {
    const std::size_t base = s * width;
    f[base + scene[s].shape] = 1.0;
    f[base + c.shapes + scene[s].color] = 1.0;
    f[base + c.shapes + c.colors + (scene[s].count - 1)] = 1.0;
  }
  return f;
}

namespace {

std::vector<std::size_t> distinct_sample(Rng& rng, std::size_t universe, std::size_t k) {
  std::vector<std::size_t> all(universe);
  for (std::size_t i = 0; i < universe; ++i) all[i] = i;
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(k);
  return all;
}

QuestionTemplate pick_template(Rng& rng, const std::array<double, 4>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return static_cast<QuestionTemplate>(i);
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return static_cast<QuestionTemplate>(i);
  return QuestionTemplate::ColorOf;
}

QAExample make_example(Rng& rng, const SyntheticConfig& c, std::int64_t scene_id) {
  std::vector<SceneSlot> scene(c.slots);
  const auto shapes = distinct_sample(rng, c.shapes, c.slots);
  const auto colors = distinct_sample(rng, c.colors, c.slots);
  for (std::size_t s = 0; s < c.slots; ++s) {
    scene[s].shape = shapes[s];
    scene[s].color = colors[s];
    scene[s].count = 1 + static_cast<std::size_t>(rng.below(c.max_count));
  }

  QAExample ex;
  ex.id = std::to_string(scene_id);
  ex.scene = scene_id;
  ex.features = encode_scene(scene, c);
  for (double& v : ex.features) v += c.noise * rng.normal();

  const auto tmpl = pick_template(rng, c.template_weights);
  ex.question_type = kTemplateNames[static_cast<std::size_t>(tmpl)];
  const SceneSlot& slot = scene[rng.below(c.slots)];
  const std::string& shape = shape_names()[slot.shape];
  const std::string& color = color_names()[slot.color];
  switch (tmpl) {
    case QuestionTemplate::ColorOf:
      ex.question = "what color is the " + shape + "?";
      ex.answers = {color};
      break;
    case QuestionTemplate::ShapeOf:
      ex.question = "what shape is " + color + "?";
      ex.answers = {shape};
      break;
    case QuestionTemplate::CountOf:
      ex.question = "how many " + shape + "?";
      ex.answers = {std::to_string(slot.count)};
      break;
    case QuestionTemplate::Exists: {
      if (rng.below(2) == 0) {
        ex.question = "is there a " + color + " " + shape + "?";
        ex.answers = {"yes"};
        break;
      }
      std::vector<std::pair<std::size_t, std::size_t>> absent;
      for (std::size_t sh = 0; sh < c.shapes; ++sh)
        for (std::size_t co = 0; co < c.colors; ++co) {
          const bool present = std::any_of(scene.begin(), scene.end(), [&](const SceneSlot& s) {
            return s.shape == sh && s.color == co;
          });
          if (!present) absent.emplace_back(sh, co);
        }
      const auto [sh, co] = absent[rng.below(absent.size())];
      ex.question = "is there a " + color_names()[co] + " " + shape_names()[sh] + "?";
      ex.answers = {"no"};
      break;
    }
  }
  return ex;
}

}  // namespace

SyntheticSplits generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  SyntheticSplits out;
  std::int64_t scene = 0;
  for (Dataset* split : {&out.train, &out.val, &out.test}) {
    const std::size_t n = split == &out.train ? config.train_size
                          : split == &out.val ? config.val_size
                                              : config.test_size;
    split->feature_dim = config.feature_dim();
    split->examples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) split->examples.push_back(make_example(rng, config, scene++));
  }
  return out;
}

}  // namespace dppnet
