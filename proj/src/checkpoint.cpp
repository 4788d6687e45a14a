// SPDX-License-Identifier: Apache-2.0
#include "dppnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dppnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "dppnet-tensors";
constexpr int kVersion = 1;

std::size_t scalar_bytes(Precision p) { return p == Precision::F32 ? 4 : 8; }

template <typename Word>
Word to_little(Word w) {
  if constexpr (std::endian::native == std::endian::big) {
    Word out = 0;
    for (std::size_t i = 0; i < sizeof(Word); ++i) {
      out = (out << 8) | (w & 0xFF);
      w >>= 8;
    }
    return out;
  } else {
    return w;
  }
}

template <typename T>
void append_scalar(std::string& blob, T value) {
  using Word = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const Word w = to_little(std::bit_cast<Word>(value));
  char bytes[sizeof(Word)];
  std::memcpy(bytes, &w, sizeof(Word));
  blob.append(bytes, sizeof(Word));
}

template <typename T>
T read_scalar(const char* bytes) {
  using Word = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Word w;
  std::memcpy(&w, bytes, sizeof(Word));
  return std::bit_cast<T>(to_little(w));
}

}  // namespace

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& value) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << value.dump(2) << '\n';
  require(out.good(), ErrorCode::Io, "failed writing '" + path.string() + "'");
}

const LoadedTensor* LoadedTensors::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const LoadedTensor& LoadedTensors::at(const std::string& name) const {
  const LoadedTensor* t = find(name);
  require(t != nullptr, ErrorCode::Format, "checkpoint has no tensor named '" + name + "'");
  return *t;
}

template <typename T>
void save_tensors(const fs::path& dir, const std::vector<TensorEntry<T>>& entries,
                  const json& metadata) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create directory '" + dir.string() + "': " + ec.message());

  const Precision dtype = precision_of<T>();
  std::string blob;
  json tensors = json::array();
  for (const auto& e : entries) {
    const std::size_t offset = blob.size();
    for (T v : e.value->data()) append_scalar(blob, v);
    tensors.push_back({{"name", e.name},
                       {"shape", e.value->shape()},
                       {"dtype", precision_name(dtype)},
                       {"offset", offset},
                       {"nbytes", blob.size() - offset},
                       {"role", param_role_name(e.role)},
                       {"group", e.group},
                       {"frozen", e.frozen}});
  }
  json manifest = {{"format", kFormat},     {"version", kVersion},
                   {"dtype", precision_name(dtype)}, {"byte_order", "little"},
                   {"blob", kBlobFile},     {"blob_bytes", blob.size()},
                   {"tensors", tensors},    {"metadata", metadata}};

  std::ofstream out(dir / kBlobFile, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot write '" + (dir / kBlobFile).string() + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  require(out.good(), ErrorCode::Io, "failed writing '" + (dir / kBlobFile).string() + "'");
  write_json_file(dir / kManifestFile, manifest);
}

template <typename T>
void save_tensors(const fs::path& dir, const ParamStore<T>& store, const json& metadata) {
  std::vector<TensorEntry<T>> entries;
  for (const auto& p : store.entries())
    entries.push_back({p.name, p.group, p.role, p.frozen, p.value});
  save_tensors(dir, entries, metadata);
}

LoadedTensors load_tensors(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestFile;
  require(fs::exists(manifest_path), ErrorCode::Io,
          "checkpoint manifest '" + manifest_path.string() + "' not found");
  const json manifest = read_json_file(manifest_path);

  LoadedTensors out;
  try {
    require(manifest.at("format").get<std::string>() == kFormat, ErrorCode::Format,
            "'" + manifest_path.string() + "' is not a dppnet tensor manifest");
    require(manifest.at("version").get<int>() == kVersion, ErrorCode::Format,
            "unsupported manifest version in '" + manifest_path.string() + "'");
    require(manifest.value("byte_order", "little") == "little", ErrorCode::Format,
            "only little-endian blobs are supported");
    out.dtype = parse_precision(manifest.at("dtype").get<std::string>());
    out.metadata = manifest.value("metadata", json::object());

    const fs::path blob_path = dir / manifest.value("blob", std::string(kBlobFile));
    std::ifstream in(blob_path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open blob '" + blob_path.string() + "'");
    const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t expected = manifest.at("blob_bytes").get<std::size_t>();
    require(blob.size() == expected, ErrorCode::Format,
            "blob '" + blob_path.string() + "' has " + std::to_string(blob.size()) +
                " bytes, manifest declares " + std::to_string(expected) + " (truncated?)");

    for (const auto& t : manifest.at("tensors")) {
      LoadedTensor lt;
      lt.name = t.at("name").get<std::string>();
      lt.group = t.value("group", std::string());
      lt.role = parse_param_role(t.value("role", std::string("static")));
      lt.frozen = t.value("frozen", false);
      lt.shape = t.at("shape").get<Shape>();
      check_shape(lt.shape);
      lt.dtype = parse_precision(t.at("dtype").get<std::string>());
      const std::size_t offset = t.at("offset").get<std::size_t>();
      const std::size_t nbytes = t.at("nbytes").get<std::size_t>();
      std::size_t count = 1;
      for (std::size_t e : lt.shape) count *= e;
      const std::size_t width = scalar_bytes(lt.dtype);
      require(nbytes == count * width, ErrorCode::Format,
              "tensor '" + lt.name + "' declares " + std::to_string(nbytes) + " bytes for shape " +
                  shape_to_string(lt.shape));
      require(offset + nbytes <= blob.size(), ErrorCode::Format,
              "tensor '" + lt.name + "' extends past the end of the blob (truncated?)");
      lt.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const char* p = blob.data() + offset + i * width;
        lt.values[i] = lt.dtype == Precision::F32 ? static_cast<double>(read_scalar<float>(p))
                                                  : read_scalar<double>(p);
      }
      out.tensors.push_back(std::move(lt));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, "malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  return out;
}

template <typename T>
void apply_tensors(const LoadedTensors& loaded, ParamStore<T>& store) {
  for (auto& p : store.entries()) {
    const LoadedTensor& lt = loaded.at(p.name);
    require(lt.shape == p.value->shape(), ErrorCode::ShapeMismatch,
            "checkpoint tensor '" + p.name + "' has shape " + shape_to_string(lt.shape) +
                ", model expects " + shape_to_string(p.value->shape()));
    *p.value = lt.as<T>();
    if (p.role != ParamRole::Buffer) p.frozen = lt.frozen;
  }
}

template void save_tensors(const fs::path&, const std::vector<TensorEntry<float>>&, const json&);
template void save_tensors(const fs::path&, const std::vector<TensorEntry<double>>&, const json&);
template void save_tensors(const fs::path&, const ParamStore<float>&, const json&);
template void save_tensors(const fs::path&, const ParamStore<double>&, const json&);
template void apply_tensors(const LoadedTensors&, ParamStore<float>&);
template void apply_tensors(const LoadedTensors&, ParamStore<double>&);

}  // namespace dppnet
