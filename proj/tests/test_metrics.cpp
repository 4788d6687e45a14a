// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dppnet/metrics.hpp"
#include "oracles.hpp"

using namespace dppnet;

namespace {

const std::filesystem::path kToyTaxonomy = std::filesystem::path(DPPNET_SOURCE_DIR) / "data/toy_taxonomy.txt";

// Restated Wu-Palmer over a parent map read straight from the text file.
struct ParentMap {
  std::map<std::string, std::string> parent;

  explicit ParentMap(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream is(line);
      std::string child, par;
      if (is >> child >> par) parent[child] = par;
    }
  }
  std::vector<std::string> chain(const std::string& node) const {
    std::vector<std::string> out{node};
    for (auto it = parent.find(node); it != parent.end(); it = parent.find(it->second)) out.push_back(it->second);
    return out;  // node ... root
  }
  double wup(const std::string& a, const std::string& b) const {
    const auto ca = chain(a), cb = chain(b);
    const std::set<std::string> sa(ca.begin(), ca.end());
    for (std::size_t i = 0; i < cb.size(); ++i)
      if (sa.count(cb[i])) {
        const double lcs_depth = static_cast<double>(cb.size() - i);
        return 2.0 * lcs_depth / static_cast<double>(ca.size() + cb.size());
      }
    return 0.0;
  }
  double mu(const std::string& a, const std::string& t, double threshold) const {
    const double w = wup(a, t);
    return w >= threshold ? w : 0.1 * w;
  }
  // direct evaluation of both directed products
  double wups_record(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                     double threshold) const {
    double forward = 1.0, backward = 1.0;
    for (const auto& a : pred) {
      double best = 0.0;
      for (const auto& t : truth) best = std::max(best, mu(a, t, threshold));
      forward *= best;
    }
    for (const auto& t : truth) {
      double best = 0.0;
      for (const auto& a : pred) best = std::max(best, mu(a, t, threshold));
      backward *= best;
    }
    return std::min(forward, backward);
  }
};

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("toy taxonomy Wu-Palmer values") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  CHECK(tax.root() == "entity");
  CHECK(wu_palmer("cat", "cat", tax) == 1.0);
  CHECK(wu_palmer("cat", "dog", tax) == doctest::Approx(2.0 * 2 / (3 + 3)).epsilon(1e-15));
  CHECK(wu_palmer("cat", "dog", tax) == doctest::Approx(0.6667).epsilon(1e-4));
  const ParentMap ref(kToyTaxonomy);
  CHECK(wu_palmer("cat", "dog", tax) == ref.wup("cat", "dog"));
}

TEST_CASE("Wu-Palmer is symmetric and matches the restated definition") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  const ParentMap ref(kToyTaxonomy);
  std::vector<std::string> terms;
  for (const auto& [child, parent] : ref.parent) terms.push_back(child);
  std::mt19937_64 gen(1);
  for (int i = 0; i < 300; ++i) {
    const auto& a = terms[oracle::random_extent(gen, 0, terms.size() - 1)];
    const auto& b = terms[oracle::random_extent(gen, 0, terms.size() - 1)];
    const double w = wu_palmer(a, b, tax);
    CHECK(w == wu_palmer(b, a, tax));
    CHECK(w == doctest::Approx(ref.wup(a, b)).epsilon(1e-15));
    CHECK((w >= 0.0 && w <= 1.0));
    CHECK((w == 1.0) == (a == b));
  }
}

TEST_CASE("thresholded similarity") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  CHECK(thresholded_mu("red", "red", tax, 0.9) == 1.0);
  CHECK(thresholded_mu("red", "red", tax, 0.0) == 1.0);
  CHECK(thresholded_mu("cat", "dog", tax, 0.9) == doctest::Approx(0.1 * 2.0 / 3.0).epsilon(1e-15));
  CHECK(thresholded_mu("cat", "dog", tax, 0.9) == doctest::Approx(0.0667).epsilon(1e-3));
  CHECK(thresholded_mu("cat", "dog", tax, 0.0) == wu_palmer("cat", "dog", tax));
  CHECK_THROWS_AS(thresholded_mu("cat", "dog", tax, 1.5), Error);
}

TEST_CASE("WUPS record values") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  const ParentMap ref(kToyTaxonomy);
  CHECK(wups_record({{"cat"}, {"dog"}}, tax, 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const EvalRecord two{{"cat", "dog"}, {"cat"}};
  CHECK(wups_record(two, tax, 0.0) == doctest::Approx(ref.wups_record(two.predicted, two.truth, 0.0)).epsilon(1e-15));
  CHECK(wups_record(two, tax, 0.9) == doctest::Approx(ref.wups_record(two.predicted, two.truth, 0.9)).epsilon(1e-15));

  std::mt19937_64 gen(2);
  std::vector<std::string> terms;
  for (const auto& [child, parent] : ref.parent) terms.push_back(child);
  for (int i = 0; i < 200; ++i) {
    EvalRecord r;
    const std::size_t np = oracle::random_extent(gen, 1, 3), nt = oracle::random_extent(gen, 1, 3);
    for (std::size_t j = 0; j < np; ++j) r.predicted.push_back(terms[oracle::random_extent(gen, 0, terms.size() - 1)]);
    for (std::size_t j = 0; j < nt; ++j) r.truth.push_back(terms[oracle::random_extent(gen, 0, terms.size() - 1)]);
    for (double th : {0.0, 0.9})
      CHECK(wups_record(r, tax, th) == doctest::Approx(ref.wups_record(r.predicted, r.truth, th)).epsilon(1e-14));
  }
}

TEST_CASE("WUPS aggregate") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  const std::vector<EvalRecord> exact{{{"cat"}, {"cat"}}, {{"red"}, {"red"}}, {{"2"}, {"2"}}};
  CHECK(wups(exact, tax, 0.9).score == 1.0);
  CHECK(wups(exact, tax, 0.0).score == 1.0);

  const std::vector<EvalRecord> with_empty{{{"cat"}, {"cat"}}, {{}, {"dog"}}, {{"zebra"}, {"dog"}}};
  const auto report = wups(with_empty, tax, 0.0);
  CHECK(report.records == 3);
  CHECK(report.empty_predictions == 1);
  CHECK(report.score == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(report.unresolved == std::set<std::string>{"zebra"});
  CHECK_THROWS_AS(wups({{{"cat"}, {}}}, tax, 0.0), Error);
}

TEST_CASE("WUPS is larger at the lower threshold") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  const ParentMap ref(kToyTaxonomy);
  std::vector<std::string> terms;
  for (const auto& [child, parent] : ref.parent) terms.push_back(child);
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalRecord> records(20);
    for (auto& r : records) {
      r.predicted = {terms[oracle::random_extent(gen, 0, terms.size() - 1)]};
      r.truth = {terms[oracle::random_extent(gen, 0, terms.size() - 1)]};
    }
    CHECK(wups(records, tax, 0.0).score >= wups(records, tax, 0.9).score);
  }
}

TEST_CASE("flat taxonomy gives a constant similarity") {
  const auto tax = Taxonomy::parse("a top\nb top\nc top\nd top\n");
  // 2·depth(top)/(depth(a)+depth(b)) = 2·1/(2+2)
  for (const char* x : {"a", "b", "c", "d"})
    for (const char* y : {"a", "b", "c", "d"}) {
      const double expect = std::string(x) == y ? 1.0 : 0.5;
      CHECK(wu_palmer(x, y, tax) == expect);
    }
  CHECK(wups({{{"a"}, {"b"}}, {{"c"}, {"c"}}}, tax, 0.9).score == doctest::Approx((0.05 + 1.0) / 2).epsilon(1e-15));
}

TEST_CASE("senses are maximised over") {
  const auto tax = Taxonomy::parse(
      "# two senses of bank\n"
      "institution thing\nterrain thing\n"
      "bank#1 institution\nbank#2 terrain\n"
      "lender institution\nriver_bank terrain\n"
      "shore river_bank\n");
  CHECK(tax.senses("bank").size() == 2);
  CHECK(tax.contains("river bank"));
  // via bank#2: lcs terrain (depth 2), depths 3 and 4
  CHECK(wu_palmer("bank", "shore", tax) == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
  CHECK(wu_palmer("bank", "lender", tax) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
  CHECK(wu_palmer("bank", "bank", tax) == 1.0);
}

TEST_CASE("malformed taxonomies are rejected") {
  CHECK_THROWS_AS(Taxonomy::parse(""), Error);
  CHECK_THROWS_AS(Taxonomy::parse("a b\nc d\n"), Error);             // two roots
  CHECK_THROWS_AS(Taxonomy::parse("a b\nb c\nc a\nx root\n"), Error);  // cycle
  CHECK_THROWS_AS(Taxonomy::parse("a b\na c\n"), Error);             // two parents
  CHECK_THROWS_AS(Taxonomy::parse("a\n"), Error);
  CHECK_THROWS_AS(Taxonomy::parse("a a\n"), Error);
  CHECK_THROWS_AS(Taxonomy::load("/nonexistent/taxonomy.txt"), Error);
}

TEST_CASE("unresolvable terms score zero") {
  const auto tax = Taxonomy::load(kToyTaxonomy);
  CHECK(wu_palmer("cat", "zebra", tax) == 0.0);
  CHECK(wu_palmer("zebra", "zebra", tax) == 1.0);
  CHECK(wu_palmer("Cat ", "cat", tax) == 1.0);
}

TEST_CASE("consensus accuracy for every match count") {
  for (int n = 0; n <= 10; ++n) {
    std::vector<std::string> annotators(10, "no");
    for (int i = 0; i < n; ++i) annotators[i] = "yes";
    CHECK(vqa_score("yes", annotators) == std::min(n / 3.0, 1.0));
  }
  CHECK(vqa_score("Yes ", {"yes", "yes", "no"}) == doctest::Approx(2.0 / 3.0));
  CHECK(vqa_accuracy({"a", "b"}, {{"a", "a", "a"}, {"c"}}) == 0.5);
  CHECK_THROWS_AS(vqa_score("a", {}), Error);
}

TEST_CASE("consensus accuracy is monotone in matches") {
  double previous = -1.0;
  for (int n = 0; n <= 10; ++n) {
    std::vector<std::string> annotators(10, "x");
    for (int i = 0; i < n; ++i) annotators[i] = "y";
    const double s = vqa_score("y", annotators);
    CHECK(s >= previous);
    previous = s;
  }
}

TEST_CASE("plain accuracy") {
  CHECK(plain_accuracy({"a", "b"}, {"a", "b"}) == 1.0);
  CHECK(plain_accuracy({"a", "b"}, {"c", "d"}) == 0.0);
  CHECK(plain_accuracy({"a", "b"}, {"a", "d"}) == 0.5);
  CHECK(plain_accuracy({"Red Car"}, {"red  car"}) == 1.0);
  CHECK_THROWS_AS(plain_accuracy({"a"}, {}), Error);
}

}  // TEST_SUITE
