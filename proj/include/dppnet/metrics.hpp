// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dppnet {

/// Rooted tree of named nodes read from `child parent` lines. A node named
/// `term#k` is the k-th sense of `term`; a plain name is a single sense.
/// Multi-word terms use '_' in the file; lookups map spaces to '_'.
class Taxonomy {
 public:
  static Taxonomy parse(std::string_view text, const std::string& source = "<memory>");
  static Taxonomy load(const std::filesystem::path& path);

  std::size_t node_count() const { return names_.size(); }
  const std::string& root() const { return names_[root_]; }
  const std::string& node_name(std::size_t node) const { return names_.at(node); }
  /// Root has depth 1.
  std::size_t depth(std::size_t node) const { return depth_.at(node); }
  std::size_t lowest_common_ancestor(std::size_t a, std::size_t b) const;
  /// Sense nodes of a term; empty when unresolvable.
  const std::vector<std::size_t>& senses(std::string_view term) const;
  bool contains(std::string_view term) const { return !senses(term).empty(); }

 private:
  std::vector<std::string> names_;
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> depth_;
  std::size_t root_ = 0;
  std::unordered_map<std::string, std::vector<std::size_t>> terms_;
};

/// Lowercased, trimmed, spaces turned into '_'.
std::string taxonomy_key(std::string_view term);

/// 2·depth(lcs) / (depth(a) + depth(b)), maximised over sense pairs. Equal
/// terms score 1; a term missing from the taxonomy scores 0 against others.
double wu_palmer(std::string_view a, std::string_view b, const Taxonomy& taxonomy);

/// Similarity below the threshold is down-weighted by this factor.
inline constexpr double kBelowThresholdWeight = 0.1;

double thresholded_mu(std::string_view a, std::string_view t, const Taxonomy& taxonomy, double threshold);

struct EvalRecord {
  std::vector<std::string> predicted;
  std::vector<std::string> truth;
};

struct WupsReport {
  double score = 0.0;
  std::size_t records = 0;
  std::size_t empty_predictions = 0;
  std::set<std::string> unresolved;  // terms missing from the taxonomy
};

/// Per record, the smaller of the two directed products of best matches;
/// averaged over records. An empty prediction scores 0.
double wups_record(const EvalRecord& record, const Taxonomy& taxonomy, double threshold);
WupsReport wups(const std::vector<EvalRecord>& records, const Taxonomy& taxonomy, double threshold);

/// min(matches / 3, 1) for one prediction against its annotator answers.
double vqa_score(std::string_view prediction, const std::vector<std::string>& annotators);
double vqa_accuracy(const std::vector<std::string>& predictions,
                    const std::vector<std::vector<std::string>>& annotators);

double plain_accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& truths);

nlohmann::json to_json(const WupsReport& r, double threshold);

}  // namespace dppnet
