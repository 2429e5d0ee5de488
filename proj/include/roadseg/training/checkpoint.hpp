#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "roadseg/models/model.hpp"
#include "roadseg/training/history.hpp"

namespace roadseg {

// Archive layout (little-endian):
//
//   "RSEGCKPT"  u32 version  u32 entry_count
//   entry_count x { u32 kind (0 parameter, 1 buffer)  u32 name_len  name
//                   i32 n  i32 c  i32 h  i32 w  f32 values[n*c*h*w] }
//   u64 FNV-1a hash of every preceding byte
//
// The sidecar `<archive>.json` holds the architecture and training state.

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMetadata {
  ModelSpec spec;
  int epoch = 0;
  double learning_rate = 0.0;
  TrainHistory history;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& archive) {
  return std::filesystem::path(archive.string() + ".json");
}

inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline nlohmann::json metadata_to_json(const CheckpointMetadata& m) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["variant"] = std::string(variant_name(m.spec.variant));
  j["in_channels"] = m.spec.in_channels;
  j["first_layer_channels"] = m.spec.first_layer_channels;
  j["depth"] = m.spec.depth;
  j["bottleneck"] = m.spec.bottleneck == Bottleneck::dilated ? "dilated" : "plain";
  j["dilations"] = m.spec.dilations;
  j["dropout_after_concat"] = m.spec.dropout_after_concat;
  j["window_size"] = m.spec.window_size;
  j["window_dropout"] = m.spec.window_dropout;
  j["leaky_slope"] = m.spec.leaky_slope;
  j["seed"] = m.spec.seed;
  j["epoch"] = m.epoch;
  j["learning_rate"] = m.learning_rate;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : m.history.records) {
    hist.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"val_loss", r.val_loss},
                    {"val_f1", r.val_f1},
                    {"val_iou", r.val_iou},
                    {"lr", r.learning_rate}});
  }
  j["history"] = hist;
  return j;
}

inline CheckpointMetadata metadata_from_json(const nlohmann::json& j) {
  CheckpointMetadata m;
  const std::string name = j.at("variant").get<std::string>();
  auto v = parse_variant(name);
  if (!v) throw CheckpointError("checkpoint metadata: unknown variant '" + name + "'");
  m.spec = spec_for(*v);
  m.spec.in_channels = j.at("in_channels").get<int>();
  m.spec.first_layer_channels = j.at("first_layer_channels").get<int>();
  m.spec.depth = j.at("depth").get<int>();
  m.spec.bottleneck = j.at("bottleneck").get<std::string>() == "dilated" ? Bottleneck::dilated : Bottleneck::plain;
  m.spec.dilations = j.at("dilations").get<std::vector<int>>();
  m.spec.dropout_after_concat = j.at("dropout_after_concat").get<double>();
  m.spec.window_size = j.at("window_size").get<int>();
  m.spec.window_dropout = j.at("window_dropout").get<double>();
  m.spec.leaky_slope = j.at("leaky_slope").get<double>();
  m.spec.seed = j.at("seed").get<std::uint64_t>();
  m.epoch = j.at("epoch").get<int>();
  m.learning_rate = j.at("learning_rate").get<double>();
  for (const auto& r : j.at("history")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.train_loss = r.at("train_loss").get<double>();
    e.val_loss = r.at("val_loss").get<double>();
    e.val_f1 = r.at("val_f1").get<double>();
    e.val_iou = r.at("val_iou").get<double>();
    e.learning_rate = r.at("lr").get<double>();
    m.history.records.push_back(e);
  }
  return m;
}

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void put(const V& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename V>
  V get(const std::string& section) {
    V v;
    read(&v, sizeof(V), section);
    return v;
  }
  void read(void* dst, std::size_t n, const std::string& section) {
    if (n > bytes_.size() - pos_) throw CheckpointError("corrupt checkpoint: truncated in section " + section);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
void save_checkpoint(Model<T>& model, const CheckpointMetadata& metadata, const std::filesystem::path& path) {
  static_assert(std::is_same_v<T, float>, "checkpoints store 32-bit parameters");
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(kCheckpointVersion);
  auto st = model.state();
  w.put(static_cast<std::uint32_t>(st.params.size() + st.buffers.size()));
  auto put_entry = [&w](std::uint32_t kind, const std::string& name, const Tensor<T>& t) {
    w.put(kind);
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    for (int d : {t.n(), t.c(), t.h(), t.w()}) w.put(static_cast<std::int32_t>(d));
    w.put_bytes(t.data(), t.size() * sizeof(T));
  };
  for (auto& [name, p] : st.params) put_entry(0, name, p->value);
  for (auto& [name, b] : st.buffers) put_entry(1, name, *b);
  w.put(fnv1a(w.bytes.data(), w.bytes.size()));

  CheckpointMetadata meta = metadata;
  meta.spec = model.spec();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
  }
  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw std::runtime_error("cannot write checkpoint metadata '" + sidecar_path(path).string() + "'");
  side << metadata_to_json(meta).dump(2) << '\n';
}

inline CheckpointMetadata read_checkpoint_metadata(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw CheckpointError("missing checkpoint metadata '" + sidecar_path(path).string() + "'");
  try {
    return metadata_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint: section metadata: " + std::string(e.what()));
  }
}

/// Loads archive values into an already constructed model whose layout
/// must match the archive entry for entry.
template <typename T>
void load_parameters(Model<T>& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kCheckpointMagic + 8 + 8) throw CheckpointError("corrupt checkpoint: section header (file too short)");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored) {
    throw CheckpointError("corrupt checkpoint: section checksum does not match contents");
  }
  bytes.resize(bytes.size() - 8);
  detail::ByteReader r(bytes);
  char magic[8];
  r.read(magic, sizeof magic, "header");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError("corrupt checkpoint: section header (bad magic)");
  const auto version = r.get<std::uint32_t>("header");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("header");
  auto st = model.state();
  const std::string variant(variant_name(model.spec().variant));
  if (count != st.params.size() + st.buffers.size()) {
    throw CheckpointError("checkpoint archive holds " + std::to_string(count) + " tensors but a '" + variant +
                          "' model has " + std::to_string(st.params.size() + st.buffers.size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string section = "entry " + std::to_string(k);
    const auto kind = r.get<std::uint32_t>(section);
    const auto len = r.get<std::uint32_t>(section);
    if (len > 4096) throw CheckpointError("corrupt checkpoint: section " + section + " (name length)");
    std::string name(len, '\0');
    r.read(name.data(), len, section);
    Shape s;
    s.n = r.get<std::int32_t>(section + " '" + name + "'");
    s.c = r.get<std::int32_t>(section + " '" + name + "'");
    s.h = r.get<std::int32_t>(section + " '" + name + "'");
    s.w = r.get<std::int32_t>(section + " '" + name + "'");
    const bool is_param = k < st.params.size();
    const std::string& expected_name = is_param ? st.params[k].first : st.buffers[k - st.params.size()].first;
    Tensor<T>& target = is_param ? st.params[k].second->value : *st.buffers[k - st.params.size()].second;
    if (kind != (is_param ? 0u : 1u) || name != expected_name || !(s == target.shape())) {
      throw CheckpointError("checkpoint archive does not match '" + variant + "' layout at entry '" + name +
                            "' " + to_string(s) + " (expected '" + expected_name + "' " +
                            to_string(target.shape()) + ")");
    }
    r.read(target.data(), target.size() * sizeof(T), section + " '" + name + "'");
  }
  if (r.pos() != bytes.size()) throw CheckpointError("corrupt checkpoint: trailing bytes after last entry");
}

/// Rebuilds the model described by the sidecar and loads its parameters.
inline std::pair<std::unique_ptr<Model<float>>, CheckpointMetadata> load_checkpoint(
    const std::filesystem::path& path) {
  CheckpointMetadata meta = read_checkpoint_metadata(path);
  auto model = build_model<float>(meta.spec);
  load_parameters(*model, path);
  return {std::move(model), std::move(meta)};
}

}  // namespace roadseg
