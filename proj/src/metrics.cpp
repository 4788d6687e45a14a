// SPDX-License-Identifier: Apache-2.0
#include "dppnet/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "dppnet/data.hpp"
#include "dppnet/error.hpp"

namespace dppnet {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

std::string term_of(const std::string& node) {
  const auto hash = node.rfind('#');
  if (hash == std::string::npos || hash == 0 || hash + 1 == node.size()) return node;
  const bool digits = std::all_of(node.begin() + static_cast<std::ptrdiff_t>(hash) + 1, node.end(),
                                  [](unsigned char c) { return std::isdigit(c) != 0; });
  return digits ? node.substr(0, hash) : node;
}

}  // namespace

std::string taxonomy_key(std::string_view term) {
  std::string key = normalize_answer(term);
  std::replace(key.begin(), key.end(), ' ', '_');
  return key;
}

Taxonomy Taxonomy::parse(std::string_view text, const std::string& source) {
  Taxonomy tax;
  std::unordered_map<std::string, std::size_t> index;
  auto node = [&](const std::string& name) {
    auto [it, inserted] = index.emplace(name, tax.names_.size());
    if (inserted) {
      tax.names_.push_back(name);
      tax.parent_.push_back(kNone);
    }
    return it->second;
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string child, parent, extra;
    if (!(fields >> child) || child.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (!(fields >> parent) || (fields >> extra))
      fail(ErrorCode::Format, where + ": expected 'child parent'");
    child = taxonomy_key(child);
    parent = taxonomy_key(parent);
    if (child == parent) fail(ErrorCode::Format, where + ": node '" + child + "' is its own parent");
    const std::size_t c = node(child);
    const std::size_t p = node(parent);
    if (tax.parent_[c] != kNone && tax.parent_[c] != p)
      fail(ErrorCode::Format, where + ": node '" + child + "' already has parent '" +
                                  tax.names_[tax.parent_[c]] + "'");
    tax.parent_[c] = p;
  }
  require(!tax.names_.empty(), ErrorCode::Format, source + ": taxonomy has no edges");

  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < tax.names_.size(); ++i)
    if (tax.parent_[i] == kNone) roots.push_back(i);
  if (roots.size() != 1) {
    std::string names;
    for (std::size_t r : roots) names += (names.empty() ? "" : ", ") + tax.names_[r];
    fail(ErrorCode::Format, source + ": taxonomy needs exactly one root, found " +
                                std::to_string(roots.size()) + (names.empty() ? "" : " (" + names + ")"));
  }
  tax.root_ = roots.front();

  tax.depth_.assign(tax.names_.size(), 0);
  tax.depth_[tax.root_] = 1;
  for (std::size_t i = 0; i < tax.names_.size(); ++i) {
    std::vector<std::size_t> path;
    std::size_t cur = i;
    while (tax.depth_[cur] == 0) {
      if (path.size() > tax.names_.size())
        fail(ErrorCode::Format, source + ": cycle through node '" + tax.names_[i] + "'");
      path.push_back(cur);
      cur = tax.parent_[cur];
    }
    for (auto it = path.rbegin(); it != path.rend(); ++it) tax.depth_[*it] = tax.depth_[tax.parent_[*it]] + 1;
  }

  for (std::size_t i = 0; i < tax.names_.size(); ++i) tax.terms_[term_of(tax.names_[i])].push_back(i);
  return tax;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open taxonomy " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::size_t Taxonomy::lowest_common_ancestor(std::size_t a, std::size_t b) const {
  require(a < names_.size() && b < names_.size(), ErrorCode::InvalidArgument, "taxonomy node out of range");
  while (depth_[a] > depth_[b]) a = parent_[a];
  while (depth_[b] > depth_[a]) b = parent_[b];
  while (a != b) {
    a = parent_[a];
    b = parent_[b];
  }
  return a;
}

const std::vector<std::size_t>& Taxonomy::senses(std::string_view term) const {
  static const std::vector<std::size_t> none;
  const auto it = terms_.find(taxonomy_key(term));
  return it == terms_.end() ? none : it->second;
}

double wu_palmer(std::string_view a, std::string_view b, const Taxonomy& taxonomy) {
  if (taxonomy_key(a) == taxonomy_key(b)) return 1.0;
  double best = 0.0;
  for (std::size_t x : taxonomy.senses(a)) {
    for (std::size_t y : taxonomy.senses(b)) {
      const std::size_t lcs = taxonomy.lowest_common_ancestor(x, y);
      const double s = 2.0 * static_cast<double>(taxonomy.depth(lcs)) /
                       static_cast<double>(taxonomy.depth(x) + taxonomy.depth(y));
      best = std::max(best, s);
    }
  }
  return best;
}

double thresholded_mu(std::string_view a, std::string_view t, const Taxonomy& taxonomy, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, ErrorCode::InvalidArgument,
          "WUPS threshold must lie in [0, 1]");
  const double s = wu_palmer(a, t, taxonomy);
  return s >= threshold ? s : kBelowThresholdWeight * s;
}

double wups_record(const EvalRecord& record, const Taxonomy& taxonomy, double threshold) {
  require(!record.truth.empty(), ErrorCode::InvalidArgument, "WUPS record has no ground-truth answer");
  if (record.predicted.empty()) return 0.0;
  auto directed = [&](const std::vector<std::string>& from, const std::vector<std::string>& to, bool swap) {
    double product = 1.0;
    for (const auto& x : from) {
      double best = 0.0;
      for (const auto& y : to)
        best = std::max(best, swap ? thresholded_mu(y, x, taxonomy, threshold)
                                   : thresholded_mu(x, y, taxonomy, threshold));
      product *= best;
    }
    return product;
  };
  return std::min(directed(record.predicted, record.truth, false),
                  directed(record.truth, record.predicted, true));
}

WupsReport wups(const std::vector<EvalRecord>& records, const Taxonomy& taxonomy, double threshold) {
  WupsReport r;
  r.records = records.size();
  double sum = 0.0;
  for (const auto& rec : records) {
    if (rec.predicted.empty()) ++r.empty_predictions;
    for (const auto* side : {&rec.predicted, &rec.truth})
      for (const auto& term : *side)
        if (!taxonomy.contains(term)) r.unresolved.insert(taxonomy_key(term));
    sum += wups_record(rec, taxonomy, threshold);
  }
  r.score = records.empty() ? 0.0 : sum / static_cast<double>(records.size());
  return r;
}

double vqa_score(std::string_view prediction, const std::vector<std::string>& annotators) {
  require(!annotators.empty(), ErrorCode::InvalidArgument, "VQA example has no annotator answers");
  const std::string p = normalize_answer(prediction);
  std::size_t matches = 0;
  for (const auto& a : annotators) matches += (normalize_answer(a) == p);
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

double vqa_accuracy(const std::vector<std::string>& predictions,
                    const std::vector<std::vector<std::string>>& annotators) {
  require(predictions.size() == annotators.size(), ErrorCode::ShapeMismatch,
          "VQA accuracy: " + std::to_string(predictions.size()) + " predictions for " +
              std::to_string(annotators.size()) + " examples");
  if (predictions.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) sum += vqa_score(predictions[i], annotators[i]);
  return sum / static_cast<double>(predictions.size());
}

double plain_accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& truths) {
  require(predictions.size() == truths.size(), ErrorCode::ShapeMismatch,
          "accuracy: " + std::to_string(predictions.size()) + " predictions for " +
              std::to_string(truths.size()) + " examples");
  if (predictions.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    correct += (normalize_answer(predictions[i]) == normalize_answer(truths[i]));
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

nlohmann::json to_json(const WupsReport& r, double threshold) {
  return {{"threshold", threshold},
          {"score", r.score},
          {"records", r.records},
          {"empty_predictions", r.empty_predictions},
          {"unresolved_terms", r.unresolved.size()},
          {"unresolved", std::vector<std::string>(r.unresolved.begin(), r.unresolved.end())}};
}

}  // namespace dppnet
