#pragma once

// Checkpoint format: one magic line, one single-line JSON header listing
// (name, dtype, shape, byte offset) per parameter, then a raw little-endian
// float32 blob. Round-trips byte-exactly.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "monorig/tensor.hpp"

namespace monorig::diff {

inline constexpr const char* kCheckpointMagic = "MONORIG-CKPT v1";

struct CheckpointEntry {
  Shape shape;
  std::vector<float> values;
};

using NamedTensors = std::map<std::string, CheckpointEntry>;

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["meta"] = meta;
  auto params = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, entry] : tensors) {
    nlohmann::json p;
    p["name"] = name;
    p["dtype"] = "f32";
    p["shape"] = entry.shape;
    p["offset"] = offset;
    params.push_back(std::move(p));
    offset += static_cast<int64_t>(entry.values.size()) * 4;
  }
  header["params"] = std::move(params);

  std::ofstream out(path, std::ios::binary);
  require(out.good(), "checkpoint: cannot open for writing: " + path);
  out << kCheckpointMagic << "\n" << header.dump() << "\n";
  for (const auto& [name, entry] : tensors) {
    if (!entry.values.empty())
      out.write(reinterpret_cast<const char*>(entry.values.data()),
                static_cast<std::streamsize>(entry.values.size() * 4));
  }
  require(out.good(), "checkpoint: write failed: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  require(magic == kCheckpointMagic, "checkpoint: bad magic in " + path);
  std::getline(in, header_line);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  NamedTensors out;
  for (const auto& p : header["params"]) {
    CheckpointEntry entry;
    entry.shape = p["shape"].get<Shape>();
    const int64_t offset = p["offset"].get<int64_t>();
    const int64_t count = numel_of(entry.shape);
    require(offset >= 0 && offset + count * 4 <= static_cast<int64_t>(blob.size()),
            "checkpoint: blob truncated for " + p["name"].get<std::string>());
    entry.values.resize(static_cast<size_t>(count));
    std::memcpy(entry.values.data(), blob.data() + offset, static_cast<size_t>(count) * 4);
    out.emplace(p["name"].get<std::string>(), std::move(entry));
  }
  return out;
}

// Ordered registry of named parameter leaves. Modules register parameters
// at construction; optimizers and checkpoints iterate in name order.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    require(params_.find(name) == params_.end(), "param store: duplicate name " + name);
    Tensor<T> t = Tensor<T>::param(std::move(shape), std::move(values));
    params_.emplace(name, t);
    return t;
  }

  Tensor<T> get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "param store: unknown name " + name);
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [k, v] : params_) n += v.numel();
    return n;
  }

  void zero_grads() const {
    for (const auto& [k, v] : params_) v.zero_grad();
  }

  NamedTensors snapshot(const std::string& prefix = "") const {
    NamedTensors out;
    for (const auto& [name, t] : params_) {
      CheckpointEntry e;
      e.shape = t.shape();
      e.values.resize(static_cast<size_t>(t.numel()));
      for (int64_t i = 0; i < t.numel(); ++i) e.values[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
      out.emplace(prefix + name, std::move(e));
    }
    return out;
  }

  // Loads values for every registered parameter; missing names are an error.
  void restore(const NamedTensors& tensors, const std::string& prefix = "") {
    for (auto& [name, t] : params_) {
      auto it = tensors.find(prefix + name);
      require(it != tensors.end(), "checkpoint: missing parameter " + prefix + name);
      require(it->second.shape == t.shape(), "checkpoint: shape mismatch for " + name);
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(it->second.values[static_cast<size_t>(i)]);
    }
  }

 private:
  std::map<std::string, Tensor<T>> params_;
};

}  // namespace monorig::diff
