// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace dppnet {

inline constexpr std::uint64_t kDefaultSeedPsi = 0x5EED0001ULL;
inline constexpr std::uint64_t kDefaultSeedXi = 0x5EED0002ULL;

/// SplitMix64 finaliser applied to x + golden ratio. Arithmetic wraps mod 2^64.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  std::uint64_t z = x + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Shape of the implicit M×N dynamic weight matrix addressed into K shared
/// candidates.
struct HashSpec {
  std::uint32_t rows = 1;        // M, output dim
  std::uint32_t cols = 1;        // N, input dim
  std::uint32_t candidates = 1;  // K
  std::uint64_t seed_psi = kDefaultSeedPsi;
  std::uint64_t seed_xi = kDefaultSeedXi;

  void validate() const;
  bool operator==(const HashSpec&) const = default;
};

nlohmann::json to_json(const HashSpec& spec);
HashSpec hash_spec_from_json(const nlohmann::json& j);

constexpr std::uint64_t hash_key(std::uint32_t m, std::uint32_t n) noexcept {
  return (static_cast<std::uint64_t>(m) << 32) | n;
}

// Unchecked forms for inner loops; callers guarantee m < M, n < N.
inline std::uint32_t bucket_unchecked(std::uint32_t m, std::uint32_t n, const HashSpec& s) noexcept {
  return static_cast<std::uint32_t>(splitmix64(hash_key(m, n) ^ s.seed_psi) % s.candidates);
}
inline int sign_unchecked(std::uint32_t m, std::uint32_t n, const HashSpec& s) noexcept {
  return (splitmix64(hash_key(m, n) ^ s.seed_xi) & 1U) == 0 ? 1 : -1;
}

/// Candidate index ψ(m, n) in [0, K).
std::uint32_t psi(std::uint32_t m, std::uint32_t n, const HashSpec& spec);
/// Sign ξ(m, n) in {+1, -1}, independent of seed_psi.
int xi(std::uint32_t m, std::uint32_t n, const HashSpec& spec);

struct HashStats {
  std::vector<std::uint64_t> bucket_loads;
  double expected_load = 0.0;
  double chi_square = 0.0;
  double chi_square_critical_999 = 0.0;  // Wilson-Hilferty, K-1 dof
  std::uint64_t empty_buckets = 0;
  double sign_mean = 0.0;
  double sign_bound = 0.0;  // 4 / sqrt(M·N)
};

HashStats hash_stats(const HashSpec& spec);
nlohmann::json to_json(const HashStats& stats, bool include_loads = true);

/// Upper 99.9% point of the chi-square distribution (Wilson-Hilferty).
double chi_square_critical_999(double dof);

}  // namespace dppnet
