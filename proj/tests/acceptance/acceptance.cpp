// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// usage: dppnet_acceptance [report.json]
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dppnet/dynamic_layer.hpp"
#include "dppnet/metrics.hpp"
#include "dppnet/pipeline.hpp"
#include "oracles.hpp"

using namespace dppnet;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

class Report {
 public:
  void record(std::string name, bool passed, std::string detail) {
    std::cout << (passed ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    outcomes_.push_back({std::move(name), passed, std::move(detail)});
  }
  bool all_passed() const {
    for (const auto& o : outcomes_)
      if (!o.passed) return false;
    return true;
  }
  json to_json() const {
    json out = json::array();
    for (const auto& o : outcomes_) out.push_back({{"criterion", o.name}, {"passed", o.passed}, {"detail", o.detail}});
    return out;
  }

 private:
  std::vector<Outcome> outcomes_;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

void gradient_oracle(Report& report) {
  const auto start = Clock::now();
  const json result = run_gradcheck(json::object(), 1);
  const double elapsed = seconds_since(start);
  const double worst = result.at("max_rel_error").get<double>();
  const auto toy = result.at("toy_config");
  const bool dims = toy.at("feature_dim") == 24 && toy.at("dyn_input") == 16 && toy.at("dyn_output") == 12 &&
                    toy.at("candidates") == 32 && toy.at("hidden") == 8 && toy.at("embed") == 8 &&
                    toy.at("num_answers") == 6;
  const bool ok = result.at("passed").get<bool>() && worst <= 1e-5 && elapsed < 120.0 && dims;
  report.record("gradient-oracle", ok,
                fmt("%zu checks, max rel error %.3e (limit 1e-5), %.1f s (limit 120 s)%s",
                    result.at("checks").size(), worst, elapsed, dims ? "" : ", toy dimensions differ"));
}

struct DenseResult {
  std::vector<double> out, delta_in, grad_p, grad_b;
};

// Materialises W from the restated hashes and runs plain dense loops.
DenseResult dense_reference(const Tensor<double>& x, std::span<const double> p, const Tensor<double>& bias,
                            const Tensor<double>& delta, const HashSpec& spec) {
  const std::size_t rows = spec.rows, cols = spec.cols, batch = x.shape()[0];
  std::vector<long double> w(rows * cols);
  std::vector<std::uint32_t> k_of(rows * cols);
  std::vector<int> s_of(rows * cols);
  for (std::uint32_t m = 0; m < rows; ++m)
    for (std::uint32_t n = 0; n < cols; ++n) {
      k_of[m * cols + n] = oracle::bucket(m, n, spec.seed_psi, spec.candidates);
      s_of[m * cols + n] = oracle::sign(m, n, spec.seed_xi);
      w[m * cols + n] = static_cast<long double>(p[k_of[m * cols + n]]) * s_of[m * cols + n];
    }
  DenseResult r;
  r.out.assign(batch * rows, 0.0);
  r.delta_in.assign(batch * cols, 0.0);
  std::vector<long double> gp(spec.candidates, 0.0L), gb(rows, 0.0L);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t m = 0; m < rows; ++m) {
      long double acc = bias[m];
      for (std::size_t n = 0; n < cols; ++n) acc += w[m * cols + n] * x[b * cols + n];
      r.out[b * rows + m] = static_cast<double>(acc);
      gb[m] += delta[b * rows + m];
    }
    for (std::size_t n = 0; n < cols; ++n) {
      long double acc = 0.0L;
      for (std::size_t m = 0; m < rows; ++m) acc += w[m * cols + n] * delta[b * rows + m];
      r.delta_in[b * cols + n] = static_cast<double>(acc);
    }
    for (std::size_t m = 0; m < rows; ++m)
      for (std::size_t n = 0; n < cols; ++n)
        gp[k_of[m * cols + n]] += static_cast<long double>(s_of[m * cols + n]) * x[b * cols + n] * delta[b * rows + m];
  }
  for (long double v : gp) r.grad_p.push_back(static_cast<double>(v));
  for (long double v : gb) r.grad_b.push_back(static_cast<double>(v));
  return r;
}

double max_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

void hashed_dense_equivalence(Report& report) {
  std::mt19937_64 gen(20240601);
  constexpr int kInstances = 60;
  double worst = 0.0;
  for (int i = 0; i < kInstances; ++i) {
    HashSpec spec;
    spec.rows = static_cast<std::uint32_t>(oracle::random_extent(gen, 1, 64));
    spec.cols = static_cast<std::uint32_t>(oracle::random_extent(gen, 1, 64));
    spec.candidates = static_cast<std::uint32_t>(oracle::random_extent(gen, 1, 64));
    spec.seed_psi = gen();
    spec.seed_xi = gen();
    const std::size_t batch = oracle::random_extent(gen, 1, 4);
    DynamicLayer<double> layer(spec);
    layer.bias = oracle::random_tensor(gen, {spec.rows});
    const auto x = oracle::random_tensor(gen, {batch, spec.cols});
    const auto p = oracle::random_tensor(gen, {spec.candidates});
    const auto delta = oracle::random_tensor(gen, {batch, spec.rows});

    const auto out = dyn_forward(x, p.data(), layer);
    const auto grads = dyn_backward(x, p.data(), delta, layer);
    const auto ref = dense_reference(x, p.data(), layer.bias, delta, spec);
    worst = std::max({worst, max_gap(out.data(), ref.out), max_gap(grads.input.data(), ref.delta_in),
                      max_gap(grads.p.data(), ref.grad_p), max_gap(grads.bias.data(), ref.grad_b)});
  }
  report.record("hashed-dense-equivalence", worst <= 1e-12,
                fmt("%d instances (M,N,K <= 64), max abs gap %.3e (limit 1e-12)", kInstances, worst));
}

// Integer-valued inputs keep every sum exact, so the comparison is equality.
void bucket_identity(Report& report) {
  std::mt19937_64 gen(77);
  std::size_t compared = 0, mismatched = 0;
  for (std::uint32_t k : {1u, 2u})
    for (int trial = 0; trial < 10; ++trial) {
      HashSpec spec;
      spec.rows = static_cast<std::uint32_t>(oracle::random_extent(gen, 1, 20));
      spec.cols = static_cast<std::uint32_t>(oracle::random_extent(gen, 1, 20));
      spec.candidates = k;
      spec.seed_psi = gen();
      spec.seed_xi = gen();
      DynamicLayer<double> layer(spec);
      Tensor<double> x({1, spec.cols}), delta({1, spec.rows}), p({k});
      for (auto& v : x.data()) v = static_cast<double>(oracle::random_extent(gen, 0, 10)) - 5.0;
      for (auto& v : delta.data()) v = static_cast<double>(oracle::random_extent(gen, 0, 10)) - 5.0;
      for (auto& v : p.data()) v = static_cast<double>(oracle::random_extent(gen, 1, 4));
      const auto grads = dyn_backward(x, std::span<const double>(p.data()), delta, layer);
      // dL/dp_k = sum over positions hashed to k of xi(m,n) * x[n] * delta[m]
      for (std::uint32_t c = 0; c < k; ++c) {
        double expect = 0.0;
        for (std::uint32_t m = 0; m < spec.rows; ++m)
          for (std::uint32_t n = 0; n < spec.cols; ++n)
            if (k == 1 || oracle::bucket(m, n, spec.seed_psi, k) == c)
              expect += oracle::sign(m, n, spec.seed_xi) * x[n] * delta[m];
        ++compared;
        mismatched += grads.p[c] != expect;
      }
    }
  report.record("bucket-identity-k1-k2", mismatched == 0,
                fmt("%zu candidate gradients compared exactly, %zu mismatches", compared, mismatched));
}

void metric_fixtures(Report& report, const std::filesystem::path& taxonomy_path) {
  const auto taxonomy = Taxonomy::load(taxonomy_path);
  const double loose = wups({{{"cat"}, {"dog"}}}, taxonomy, 0.0).score;
  const double strict = wups({{{"cat"}, {"dog"}}}, taxonomy, 0.9).score;
  bool vqa_exact = true;
  for (int n = 0; n <= 10; ++n) {
    std::vector<std::string> annotators(10, "other");
    for (int i = 0; i < n; ++i) annotators[i] = "answer";
    vqa_exact = vqa_exact && vqa_score("answer", annotators) == std::min(n / 3.0, 1.0);
  }
  const bool ok = std::abs(loose - 0.6667) <= 5e-5 && std::abs(strict - 0.0667) <= 5e-5 && vqa_exact;
  report.record("metric-fixtures", ok,
                fmt("WUPS cat/dog %.4f at 0.0, %.4f at 0.9; consensus accuracy n=0..10 %s", loose, strict,
                    vqa_exact ? "exact" : "MISMATCH"));
}

struct RunOutcome {
  double test_acc = 0.0;
  std::size_t parameters = 0;
  std::size_t epochs = 0;
};

RunOutcome run_variant(Variant variant, std::uint64_t seed, const SyntheticSplits& splits,
                       const std::filesystem::path& dir) {
  RunConfig config;
  config.model.variant = variant;
  config.set_seed(seed);
  const auto summary = train_run(config, splits.train, splits.val, dir);
  const auto model = LoadedModel::load(dir);
  RunOutcome r;
  r.test_acc = model.evaluate(splits.test, EvalOptions{}).at("accuracy").get<double>();
  r.parameters = summary.at("parameter_count").get<std::size_t>();
  r.epochs = summary.at("epochs_run").get<std::size_t>();
  std::cerr << "  " << variant_name(variant) << " seed " << seed << ": test " << r.test_acc << " after " << r.epochs
            << " epochs, " << r.parameters << " parameters\n";
  return r;
}

double mean_of(const std::vector<RunOutcome>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.test_acc;
  return s / static_cast<double>(runs.size());
}

double controlled_experiment(Report& report, const SyntheticSplits& splits, const std::filesystem::path& work) {
  const auto start = Clock::now();
  std::vector<RunOutcome> dpp, concat, fixed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const std::string tag = std::to_string(seed);
    dpp.push_back(run_variant(Variant::Dppnet, seed, splits, work / ("dppnet_" + tag)));
    concat.push_back(run_variant(Variant::Concat, seed, splits, work / ("concat_" + tag)));
    fixed.push_back(run_variant(Variant::CnnFixed, seed, splits, work / ("cnn_fixed_" + tag)));
  }
  const double elapsed = seconds_since(start);
  const double m_dpp = mean_of(dpp), m_concat = mean_of(concat), m_fixed = mean_of(fixed);

  bool each_above = true;
  std::size_t max_epochs = 0;
  for (const auto& r : dpp) {
    each_above = each_above && r.test_acc >= 0.90;
    max_epochs = std::max(max_epochs, r.epochs);
  }
  report.record("synthetic-a-dppnet-accuracy", each_above && max_epochs <= 100,
                fmt("test accuracy %.3f / %.3f / %.3f for seeds 1-3 (limit >= 0.90), at most %zu epochs (limit 100)",
                    dpp[0].test_acc, dpp[1].test_acc, dpp[2].test_acc, max_epochs));

  const double ratio = static_cast<double>(concat[0].parameters) / static_cast<double>(dpp[0].parameters);
  const bool matched = ratio >= 0.95 && ratio <= 1.05;
  report.record("synthetic-b-dppnet-vs-concat", matched && m_dpp >= m_concat,
                fmt("mean test accuracy DPPnet %.3f vs CONCAT %.3f; parameters %zu vs %zu (ratio %.3f, limit 0.95-1.05)",
                    m_dpp, m_concat, dpp[0].parameters, concat[0].parameters, ratio));

  report.record("synthetic-c-cnn-fixed", m_fixed <= m_dpp,
                fmt("mean test accuracy CNN-FIXED %.3f vs DPPnet %.3f", m_fixed, m_dpp));

  report.record("synthetic-runtime", elapsed < 900.0, fmt("9 training runs in %.0f s (limit 900 s)", elapsed));
  return m_dpp;
}

void determinism(Report& report, const SyntheticSplits& splits, const std::filesystem::path& work) {
  constexpr std::size_t kEpochs = 8;
  RunConfig config;
  config.precision = Precision::F64;
  config.set_seed(11);
  config.schedule.max_epochs = kEpochs;
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    const auto dir = work / ("determinism_" + std::to_string(i));
    (void)train_run(config, splits.train, splits.val, dir);
    std::ifstream in(dir / kTrainLogFile, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    logs[i] = os.str();
  }
  std::size_t lines = 0;
  for (char c : logs[0]) lines += c == '\n';
  report.record("determinism-f64", !logs[0].empty() && logs[0] == logs[1],
                fmt("two 64-bit runs, %zu epoch log lines, byte-identical: %s", lines,
                    logs[0] == logs[1] ? "yes" : "no"));
}

void question_necessity(Report& report, const SyntheticSplits& splits, double dppnet_acc) {
  const auto vb = build_vocab(splits.train);
  const auto train_set = encode_dataset<double>(splits.train, vb.vocab, vb.answers);
  const auto test_set = encode_dataset<double>(splits.test, vb.vocab, vb.answers);
  const auto probe = linear_probe(train_set, test_set, vb.answers.size());
  const double gap = dppnet_acc - probe.test_acc;
  report.record("question-necessity", gap >= 0.25,
                fmt("feature-only probe %.3f (majority %.3f), DPPnet mean %.3f, gap %.1f points (limit >= 25)",
                    probe.test_acc, probe.majority_acc, dppnet_acc, 100.0 * gap));
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const auto start = Clock::now();
    Report report;
    gradient_oracle(report);
    hashed_dense_equivalence(report);
    bucket_identity(report);
    metric_fixtures(report, std::filesystem::path(DPPNET_SOURCE_DIR) / "data/toy_taxonomy.txt");

    oracle::TempDir work("acceptance");
    const auto splits = generate_synthetic(SyntheticConfig{}, 1);
    const double dppnet_acc = controlled_experiment(report, splits, work.path());
    determinism(report, splits, work.path());
    question_necessity(report, splits, dppnet_acc);

    std::cout << (report.all_passed() ? "ALL PASS" : "SOME FAILED") << fmt(" (%.0f s)", seconds_since(start))
              << std::endl;
    if (argc > 1) {
      std::ofstream out(argv[1]);
      out << json{{"criteria", report.to_json()}, {"passed", report.all_passed()}}.dump(2) << '\n';
    }
    return report.all_passed() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << '\n';
    return 2;
  }
}
