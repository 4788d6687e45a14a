// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "dppnet/checkpoint.hpp"
#include "dppnet/model.hpp"
#include "oracles.hpp"

using namespace dppnet;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.feature_dim = 10;
  c.adapter_hidden = 12;
  c.dyn_input = 8;
  c.dyn_output = 6;
  c.candidates = 16;
  c.hidden = 5;
  c.embed = 4;
  c.num_answers = 4;
  c.vocab_size = 7;
  return c;
}

template <typename T>
void perturb(ParamStore<T>& store, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (auto& p : store.entries())
    for (auto& v : p.value->data()) v = static_cast<T>(dist(gen));
}

template <typename T>
void check_round_trip() {
  oracle::TempDir dir("ckpt");
  Model<T> source(small_config());
  perturb(source.params(), 11);
  source.params().set_group_frozen("encoder", true);
  save_tensors(dir.path(), source.params(), {{"note", "round trip"}});

  const auto loaded = load_tensors(dir.path());
  CHECK(loaded.dtype == precision_of<T>());
  CHECK(loaded.metadata.at("note") == "round trip");

  auto other = small_config();
  other.init_seed = 99;
  Model<T> target(other);
  apply_tensors(loaded, target.params());
  const auto& a = source.params().entries();
  const auto& b = target.params().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK_MESSAGE(std::memcmp(a[i].value->data().data(), b[i].value->data().data(),
                              a[i].value->size() * sizeof(T)) == 0,
                  a[i].name);
    CHECK(a[i].frozen == b[i].frozen);
  }
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip is bit-exact in both precisions") {
  check_round_trip<float>();
  check_round_trip<double>();
}

TEST_CASE("manifest records every tensor") {
  oracle::TempDir dir("manifest");
  Model<float> model(small_config());
  save_tensors(dir.path(), model.params());
  const auto manifest = read_json_file(dir.path() / kManifestFile);
  CHECK(manifest.at("byte_order") == "little");
  CHECK(manifest.at("dtype") == "f32");
  std::size_t expected_offset = 0;
  const auto& entries = model.params().entries();
  REQUIRE(manifest.at("tensors").size() == entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = manifest.at("tensors")[i];
    CHECK(t.at("name") == entries[i].name);
    CHECK(t.at("shape").get<Shape>() == entries[i].value->shape());
    CHECK(t.at("group") == entries[i].group);
    CHECK(t.at("role") == param_role_name(entries[i].role));
    CHECK(t.at("offset").get<std::size_t>() == expected_offset);
    CHECK(t.at("nbytes").get<std::size_t>() == entries[i].value->size() * sizeof(float));
    expected_offset += t.at("nbytes").get<std::size_t>();
  }
  CHECK(manifest.at("blob_bytes").get<std::size_t>() == expected_offset);
  CHECK(std::filesystem::file_size(dir.path() / kBlobFile) == expected_offset);
}

TEST_CASE("blob scalars are little-endian") {
  oracle::TempDir dir("endian");
  Tensor<double> t({1, 2}, {1.0, -2.5});
  save_tensors<double>(dir.path(), std::vector<TensorEntry<double>>{{"x", "g", ParamRole::Static, false, &t}});
  std::ifstream in(dir.path() / kBlobFile, std::ios::binary);
  unsigned char bytes[16];
  in.read(reinterpret_cast<char*>(bytes), 16);
  // 1.0 = 0x3FF0000000000000
  CHECK(bytes[7] == 0x3F);
  CHECK(bytes[6] == 0xF0);
  for (int i = 0; i < 6; ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  oracle::TempDir dir("corrupt");
  Model<double> model(small_config());
  save_tensors(dir.path(), model.params());
  const auto size = std::filesystem::file_size(dir.path() / kBlobFile);
  std::filesystem::resize_file(dir.path() / kBlobFile, size - 8);
  try {
    (void)load_tensors(dir.path());
    FAIL("truncated blob accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
  }
  CHECK_THROWS_AS(load_tensors(dir.path() / "absent"), Error);
}

TEST_CASE("shape mismatches are reported by name") {
  oracle::TempDir dir("mismatch");
  Model<double> model(small_config());
  save_tensors(dir.path(), model.params());
  auto bigger = small_config();
  bigger.candidates = 32;
  Model<double> other(bigger);
  try {
    apply_tensors(load_tensors(dir.path()), other.params());
    FAIL("mismatched shapes accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
    CHECK(std::string(e.what()).find("predictor.w_p") != std::string::npos);
  }
}

}  // TEST_SUITE
