// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "dppnet/hashing.hpp"
#include "oracles.hpp"

using namespace dppnet;

TEST_SUITE("hashing") {

TEST_CASE("splitmix64 reference values") {
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(1) == 0x910A2DEC89025CC1ULL);
  CHECK(splitmix64(1) == oracle::splitmix64(1));
  for (std::uint64_t x : {2ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL, 0x123456789ABCDEFULL}) {
    CHECK(splitmix64(x) == oracle::splitmix64(x));
    CHECK(splitmix64(x) == splitmix64(x));
  }
  static_assert(splitmix64(0) == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("psi matches the composed reference chain") {
  HashSpec spec;
  spec.rows = 8;
  spec.cols = 8;
  spec.candidates = 10;
  spec.seed_psi = 42;
  spec.seed_xi = 43;
  // key (3 << 32 | 7) = 0x0000000300000007; xor 42; splitmix64 -> 11308117786386309544; mod 10 -> 4
  CHECK(psi(3, 7, spec) == 4);
  CHECK(psi(3, 7, spec) == psi(3, 7, spec));
}

TEST_CASE("psi range and K = 1") {
  HashSpec spec;
  spec.rows = 16;
  spec.cols = 16;
  spec.candidates = 1;
  for (std::uint32_t m = 0; m < 16; ++m)
    for (std::uint32_t n = 0; n < 16; ++n) CHECK(psi(m, n, spec) == 0);
  spec.candidates = 7;
  for (std::uint32_t m = 0; m < 16; ++m)
    for (std::uint32_t n = 0; n < 16; ++n) {
      CHECK(psi(m, n, spec) < 7);
      CHECK(psi(m, n, spec) == oracle::bucket(m, n, spec.seed_psi, 7));
    }
}

TEST_CASE("xi is a sign and ignores seed_psi") {
  HashSpec a;
  a.rows = 32;
  a.cols = 32;
  HashSpec b = a;
  b.seed_psi = 12345;
  for (std::uint32_t m = 0; m < 32; ++m)
    for (std::uint32_t n = 0; n < 32; ++n) {
      const int s = xi(m, n, a);
      CHECK((s == 1 || s == -1));
      CHECK(s == xi(m, n, b));
      CHECK(s == oracle::sign(m, n, a.seed_xi));
    }
}

TEST_CASE("out-of-range coordinates are rejected") {
  HashSpec spec;
  spec.rows = 4;
  spec.cols = 5;
  spec.candidates = 3;
  CHECK_THROWS_AS(psi(4, 0, spec), Error);
  CHECK_THROWS_AS(psi(0, 5, spec), Error);
  CHECK_THROWS_AS(xi(4, 0, spec), Error);
}

TEST_CASE("spec validation") {
  HashSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.seed_xi = spec.seed_psi;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = HashSpec{};
  spec.candidates = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = HashSpec{};
  spec.rows = 12;
  spec.cols = 9;
  spec.candidates = 33;
  CHECK(hash_spec_from_json(to_json(spec)) == spec);
}

TEST_CASE("sign balance over a 256x256 grid") {
  HashSpec spec;
  spec.rows = 256;
  spec.cols = 256;
  double sum = 0.0;
  for (std::uint32_t m = 0; m < 256; ++m)
    for (std::uint32_t n = 0; n < 256; ++n) sum += xi(m, n, spec);
  CHECK(std::abs(sum / 65536.0) <= 4.0 / std::sqrt(65536.0));
}

TEST_CASE("hash_stats at the default seeds") {
  HashSpec spec;
  spec.rows = 64;
  spec.cols = 64;
  spec.candidates = 256;
  const HashStats stats = hash_stats(spec);
  REQUIRE(stats.bucket_loads.size() == 256);
  std::uint64_t total = 0;
  for (auto l : stats.bucket_loads) total += l;
  CHECK(total == 64 * 64);
  CHECK(stats.expected_load == 16.0);
  // independent histogram and statistic
  std::vector<double> loads(256, 0.0);
  for (std::uint32_t m = 0; m < 64; ++m)
    for (std::uint32_t n = 0; n < 64; ++n) loads[oracle::bucket(m, n, spec.seed_psi, 256)] += 1.0;
  double chi = 0.0;
  for (double l : loads) chi += (l - 16.0) * (l - 16.0) / 16.0;
  CHECK(stats.chi_square == doctest::Approx(chi).epsilon(1e-12));
  CHECK(stats.chi_square < stats.chi_square_critical_999);
  CHECK(std::abs(stats.sign_mean) <= stats.sign_bound);
  CHECK(stats.sign_bound == doctest::Approx(4.0 / 64.0));
  // M·N = 16·K: every bucket is hit
  CHECK(stats.empty_buckets == 0);
}

TEST_CASE("chi-square critical value approximation") {
  // tabulated upper 0.1% points
  CHECK(chi_square_critical_999(255) == doctest::Approx(330.52).epsilon(2e-3));
  CHECK(chi_square_critical_999(10) == doctest::Approx(29.588).epsilon(1e-2));
}

TEST_CASE("surjective when the grid is much larger than K") {
  for (std::uint32_t k : {1u, 2u, 17u, 64u, 256u}) {
    HashSpec spec;
    spec.candidates = k;
    spec.rows = 64;
    spec.cols = k;  // M·N = 64·K
    std::set<std::uint32_t> seen;
    for (std::uint32_t m = 0; m < spec.rows; ++m)
      for (std::uint32_t n = 0; n < spec.cols; ++n) seen.insert(psi(m, n, spec));
    CHECK(seen.size() == k);
  }
}

}  // TEST_SUITE
