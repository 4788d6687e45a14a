// SPDX-License-Identifier: Apache-2.0
#include "dppnet/hashing.hpp"

#include <cmath>

#include "dppnet/error.hpp"

namespace dppnet {

using nlohmann::json;

void HashSpec::validate() const {
  require(rows >= 1 && cols >= 1 && candidates >= 1, ErrorCode::Config,
          "hash spec needs M, N, K >= 1 (got M=" + std::to_string(rows) +
              ", N=" + std::to_string(cols) + ", K=" + std::to_string(candidates) + ")");
  require(seed_psi != seed_xi, ErrorCode::Config, "hash seeds for psi and xi must differ");
}

json to_json(const HashSpec& spec) {
  return {{"M", spec.rows},
          {"N", spec.cols},
          {"K", spec.candidates},
          {"seed_psi", spec.seed_psi},
          {"seed_xi", spec.seed_xi}};
}

HashSpec hash_spec_from_json(const json& j) {
  HashSpec s;
  try {
    s.rows = j.at("M").get<std::uint32_t>();
    s.cols = j.at("N").get<std::uint32_t>();
    s.candidates = j.at("K").get<std::uint32_t>();
    s.seed_psi = j.value("seed_psi", kDefaultSeedPsi);
    s.seed_xi = j.value("seed_xi", kDefaultSeedXi);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed hash spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {
void check_position(std::uint32_t m, std::uint32_t n, const HashSpec& spec) {
  require(m < spec.rows && n < spec.cols, ErrorCode::InvalidArgument,
          "hash position (" + std::to_string(m) + ", " + std::to_string(n) +
              ") outside " + std::to_string(spec.rows) + "x" + std::to_string(spec.cols));
}
}  // namespace

std::uint32_t psi(std::uint32_t m, std::uint32_t n, const HashSpec& spec) {
  check_position(m, n, spec);
  return bucket_unchecked(m, n, spec);
}

int xi(std::uint32_t m, std::uint32_t n, const HashSpec& spec) {
  check_position(m, n, spec);
  return sign_unchecked(m, n, spec);
}

double chi_square_critical_999(double dof) {
  constexpr double z = 3.090232306167813;  // standard normal 0.999 quantile
  const double a = 2.0 / (9.0 * dof);
  const double c = 1.0 - a + z * std::sqrt(a);
  return dof * c * c * c;
}

HashStats hash_stats(const HashSpec& spec) {
  spec.validate();
  HashStats st;
  st.bucket_loads.assign(spec.candidates, 0);
  long long sign_sum = 0;
  for (std::uint32_t m = 0; m < spec.rows; ++m) {
    for (std::uint32_t n = 0; n < spec.cols; ++n) {
      ++st.bucket_loads[bucket_unchecked(m, n, spec)];
      sign_sum += sign_unchecked(m, n, spec);
    }
  }
  const double cells = static_cast<double>(spec.rows) * spec.cols;
  st.expected_load = cells / spec.candidates;
  for (std::uint64_t load : st.bucket_loads) {
    const double d = static_cast<double>(load) - st.expected_load;
    st.chi_square += d * d / st.expected_load;
    if (load == 0) ++st.empty_buckets;
  }
  st.chi_square_critical_999 =
      spec.candidates > 1 ? chi_square_critical_999(spec.candidates - 1.0) : 0.0;
  st.sign_mean = static_cast<double>(sign_sum) / cells;
  st.sign_bound = 4.0 / std::sqrt(cells);
  return st;
}

json to_json(const HashStats& st, bool include_loads) {
  json j = {{"expected_load", st.expected_load},
            {"chi_square", st.chi_square},
            {"chi_square_critical_999", st.chi_square_critical_999},
            {"chi_square_ok", st.chi_square <= st.chi_square_critical_999},
            {"empty_buckets", st.empty_buckets},
            {"sign_mean", st.sign_mean},
            {"sign_bound", st.sign_bound},
            {"sign_balanced", std::abs(st.sign_mean) <= st.sign_bound}};
  if (include_loads) j["bucket_loads"] = st.bucket_loads;
  return j;
}

}  // namespace dppnet
