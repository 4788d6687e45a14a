// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppnet/param_store.hpp"

namespace dppnet {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "params.bin";

template <typename T>
struct TensorEntry {
  std::string name;
  std::string group;
  ParamRole role = ParamRole::Static;
  bool frozen = false;
  const Tensor<T>* value = nullptr;
};

struct LoadedTensor {
  std::string name;
  std::string group;
  ParamRole role = ParamRole::Static;
  bool frozen = false;
  Shape shape;
  Precision dtype = Precision::F64;
  std::vector<double> values;  // widened; float -> double -> float is exact

  template <typename T>
  Tensor<T> as() const {
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<T>(values[i]);
    return t;
  }
};

struct LoadedTensors {
  Precision dtype = Precision::F64;
  nlohmann::json metadata;
  std::vector<LoadedTensor> tensors;

  const LoadedTensor* find(const std::string& name) const;
  const LoadedTensor& at(const std::string& name) const;
};

/// Writes `manifest.json` and `params.bin` (little-endian raw scalars in
/// manifest order) into `dir`, creating it if needed.
template <typename T>
void save_tensors(const std::filesystem::path& dir, const std::vector<TensorEntry<T>>& entries,
                  const nlohmann::json& metadata = nlohmann::json::object());

template <typename T>
void save_tensors(const std::filesystem::path& dir, const ParamStore<T>& store,
                  const nlohmann::json& metadata = nlohmann::json::object());

LoadedTensors load_tensors(const std::filesystem::path& dir);

/// Copies every store entry from `loaded` by name (shapes must agree) and
/// restores frozen flags.
template <typename T>
void apply_tensors(const LoadedTensors& loaded, ParamStore<T>& store);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value);

}  // namespace dppnet
