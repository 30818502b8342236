#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "caepl/graph.hpp"

namespace caepl {

namespace detail {

inline std::uint32_t crc32_update(std::uint32_t crc, const void* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const unsigned char*>(data);
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'E', 'P', 'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::string dtype;  // "f32" or "f64": the stored precision
  std::vector<double> data;
};

struct CheckpointMeta {
  int epoch = -1;
  std::string monitor;  // e.g. "min_val_loss"
  double value = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
};

// Self-describing container: the model's GraphSpec plus every parameter and
// moving-stat array by name. In memory arrays are held as double, which
// represents f32 payloads exactly, so save/load round-trips are bitwise.
struct Checkpoint {
  nlohmann::json model_spec;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, CheckpointTensor>> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

template <typename S>
Checkpoint checkpoint_from_model(ModelGraph<S>& model, CheckpointMeta meta = {}) {
  Checkpoint ck;
  ck.model_spec = model.spec().to_json();
  ck.meta = std::move(meta);
  const char* dtype = sizeof(S) == 4 ? "f32" : "f64";
  for (auto& [name, t] : model.all_tensors()) {
    CheckpointTensor ct;
    ct.shape = t->shape;
    ct.dtype = dtype;
    ct.data.assign(t->values.begin(), t->values.end());
    ck.tensors.emplace_back(name, std::move(ct));
  }
  return ck;
}

// Restores every stored array into the model by name. Shapes must match and
// no stored tensor may be missing from the model.
template <typename S>
void apply_checkpoint(const Checkpoint& ck, ModelGraph<S>& model) {
  for (const auto& [name, ct] : ck.tensors) {
    auto t = model.tensor_by_name(name);
    if (!t) throw TransferError("checkpoint tensor '" + name + "' has no home in the model");
    if (t->shape != ct.shape)
      throw TransferError("checkpoint tensor '" + name + "' has shape " + shape_str(ct.shape) +
                          ", model expects " + shape_str(t->shape));
    for (std::size_t i = 0; i < ct.data.size(); ++i) t->values[i] = static_cast<S>(ct.data[i]);
  }
}

template <typename S>
ModelGraph<S> model_from_checkpoint(const Checkpoint& ck) {
  ModelGraph<S> model(GraphSpec::from_json(ck.model_spec));
  apply_checkpoint(ck, model);
  return model;
}

namespace detail {

template <typename T>
void append_bytes(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model_spec"] = ck.model_spec;
  header["metadata"] = {{"epoch", ck.meta.epoch},
                        {"monitor", ck.meta.monitor},
                        {"value", ck.meta.value},
                        {"config_hash", ck.meta.config_hash},
                        {"seed", ck.meta.seed}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : ck.tensors)
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"dtype", t.dtype}});
  header["tensors"] = std::move(tensors);
  const std::string header_str = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_bytes(blob, kCheckpointVersion);
  detail::append_bytes(blob, static_cast<std::uint64_t>(header_str.size()));
  blob += header_str;
  for (const auto& [name, t] : ck.tensors) {
    if (t.dtype == "f32") {
      for (double v : t.data) detail::append_bytes(blob, static_cast<float>(v));
    } else if (t.dtype == "f64") {
      for (double v : t.data) detail::append_bytes(blob, v);
    } else {
      throw CheckpointError("unknown dtype '" + t.dtype + "'");
    }
  }
  const std::uint32_t crc = detail::crc32_update(0, blob.data(), blob.size());
  detail::append_bytes(blob, crc);

  // Atomic replace: never leave a partial file behind.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t) + 4)
    throw CheckpointError("checkpoint '" + path.string() + "' is truncated");
  if (std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");

  const std::uint32_t crc_stored =
      *reinterpret_cast<const std::uint32_t*>(blob.data() + blob.size() - 4);
  const std::uint32_t crc_actual = detail::crc32_update(0, blob.data(), blob.size() - 4);
  if (crc_stored != crc_actual)
    throw CheckpointError("checkpoint '" + path.string() + "' failed its integrity check");

  std::size_t off = sizeof(kCheckpointMagic);
  std::uint32_t version;
  std::memcpy(&version, blob.data() + off, sizeof(version));
  off += sizeof(version);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is incompatible with supported version " +
                          std::to_string(kCheckpointVersion));
  std::uint64_t header_len;
  std::memcpy(&header_len, blob.data() + off, sizeof(header_len));
  off += sizeof(header_len);
  if (off + header_len > blob.size() - 4)
    throw CheckpointError("checkpoint '" + path.string() + "' header overruns the file");

  nlohmann::json header = nlohmann::json::parse(blob.substr(off, header_len));
  off += header_len;

  Checkpoint ck;
  ck.model_spec = header.at("model_spec");
  const auto& meta = header.at("metadata");
  ck.meta.epoch = meta.value("epoch", -1);
  ck.meta.monitor = meta.value("monitor", std::string());
  ck.meta.value = meta.value("value", 0.0);
  ck.meta.config_hash = meta.value("config_hash", std::string());
  ck.meta.seed = meta.value("seed", std::uint64_t{0});

  for (const auto& tj : header.at("tensors")) {
    CheckpointTensor ct;
    ct.shape = tj.at("shape").get<Shape>();
    ct.dtype = tj.at("dtype").get<std::string>();
    const auto n = static_cast<std::size_t>(numel(ct.shape));
    ct.data.resize(n);
    const std::size_t elem = ct.dtype == "f32" ? 4 : 8;
    if (off + n * elem > blob.size() - 4)
      throw CheckpointError("checkpoint '" + path.string() + "' tensor data overruns the file");
    if (ct.dtype == "f32") {
      for (std::size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, blob.data() + off + i * 4, 4);
        ct.data[i] = static_cast<double>(v);
      }
    } else if (ct.dtype == "f64") {
      std::memcpy(ct.data.data(), blob.data() + off, n * 8);
    } else {
      throw CheckpointError("unknown dtype '" + ct.dtype + "' in checkpoint");
    }
    off += n * elem;
    ck.tensors.emplace_back(tj.at("name").get<std::string>(), std::move(ct));
  }
  return ck;
}

}  // namespace caepl
