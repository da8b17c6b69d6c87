#pragma once

// Loader for the tensor-container checkpoint format:
//
//   u64 little-endian header length L
//   L bytes of UTF-8 JSON:
//     { "<tensor name>": {"dtype": "F32", "shape": [..], "data_offsets": [begin, end]},
//       ...,
//       "__metadata__": { "num_classes": .., "image_mean": [..], "image_std": [..],
//                         "class_names": [..], "num_heads": .., "layer_norm_eps": .. } }
//   raw little-endian payload; offsets are relative to the first payload byte.
//
// Metadata values may be JSON values or strings holding JSON text.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitcam/config.hpp"
#include "vitcam/error.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/weights.hpp"

namespace vitcam {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are read in host byte order");

inline constexpr const char* kMetadataKey = "__metadata__";

enum class DType { f16, bf16, f32, f64 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f16:
    case DType::bf16:
      return 2;
    case DType::f32:
      return 4;
    case DType::f64:
      return 8;
  }
  return 0;
}

inline std::optional<DType> parse_dtype(const std::string& s) {
  if (s == "F16") return DType::f16;
  if (s == "BF16") return DType::bf16;
  if (s == "F32") return DType::f32;
  if (s == "F64") return DType::f64;
  return std::nullopt;
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::f16:
      return "F16";
    case DType::bf16:
      return "BF16";
    case DType::f32:
      return "F32";
    case DType::f64:
      return "F64";
  }
  return "?";
}

/// IEEE 754 binary16 to binary32, including subnormals, infinities and NaN.
inline float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

struct TensorEntry {
  std::string name;
  DType dtype;
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

/// Parsed header: tensor table plus the free-form metadata object.
struct ContainerHeader {
  std::vector<TensorEntry> tensors;
  nlohmann::json metadata = nlohmann::json::object();
  std::uint64_t payload_offset = 0;
  std::uint64_t payload_size = 0;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading checkpoint " + path.string());
  return bytes;
}

inline nlohmann::json metadata_value(const nlohmann::json& meta, const char* key) {
  if (!meta.is_object() || !meta.contains(key)) return nullptr;
  const auto& v = meta.at(key);
  if (v.is_string()) {
    auto parsed = nlohmann::json::parse(v.get<std::string>(), nullptr, false);
    if (!parsed.is_discarded()) return parsed;
  }
  return v;
}

template <typename T>
bool metadata_number(const nlohmann::json& meta, const char* key, T& out) {
  const auto v = metadata_value(meta, key);
  if (!v.is_number()) return false;
  out = v.get<T>();
  return true;
}

inline Tensor<float> decode_tensor(const TensorEntry& e, const unsigned char* payload) {
  const std::size_t count = shape_size(e.shape);
  std::vector<float> values(count);
  const unsigned char* src = payload + e.begin;
  switch (e.dtype) {
    case DType::f32:
      std::memcpy(values.data(), src, count * 4);
      break;
    case DType::f64:
      for (std::size_t i = 0; i < count; ++i) {
        double d;
        std::memcpy(&d, src + 8 * i, 8);
        values[i] = static_cast<float>(d);
      }
      break;
    case DType::f16:
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        values[i] = half_to_float(h);
      }
      break;
    case DType::bf16:
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
      break;
  }
  return Tensor<float>(e.shape, std::move(values));
}

}  // namespace detail

/// Parses and bounds-checks the container header of an in-memory file image.
/// Structural problems (lengths, offsets, dtypes) raise FormatError;
/// a tensor whose byte span disagrees with its shape raises ValidationError.
inline ContainerHeader parse_container_header(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint shorter than its 8-byte header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) {
    throw FormatError("header length " + std::to_string(header_len) +
                      " exceeds file size " + std::to_string(bytes.size()));
  }
  const char* hb = reinterpret_cast<const char*>(bytes.data() + 8);
  auto json = nlohmann::json::parse(hb, hb + header_len, nullptr, false);
  if (json.is_discarded() || !json.is_object()) {
    throw FormatError("checkpoint header is not a JSON object");
  }

  ContainerHeader header;
  header.payload_offset = 8 + header_len;
  header.payload_size = bytes.size() - header.payload_offset;

  for (auto it = json.begin(); it != json.end(); ++it) {
    if (it.key() == kMetadataKey) {
      header.metadata = it.value();
      continue;
    }
    const auto& v = it.value();
    if (!v.is_object() || !v.contains("dtype") || !v.contains("shape") ||
        !v.contains("data_offsets")) {
      throw FormatError(it.key() + ": header entry needs dtype, shape and data_offsets");
    }
    TensorEntry e;
    e.name = it.key();
    if (!v["dtype"].is_string()) throw FormatError(e.name + ": dtype must be a string");
    auto dt = parse_dtype(v["dtype"].get<std::string>());
    if (!dt) throw FormatError(e.name + ": unknown dtype " + v["dtype"].get<std::string>());
    e.dtype = *dt;
    if (!v["shape"].is_array()) throw FormatError(e.name + ": shape must be an array");
    for (const auto& d : v["shape"]) {
      if (!d.is_number_unsigned()) throw FormatError(e.name + ": bad shape entry");
      e.shape.push_back(d.get<std::size_t>());
    }
    const auto& off = v["data_offsets"];
    if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() ||
        !off[1].is_number_unsigned()) {
      throw FormatError(e.name + ": data_offsets must be [begin, end]");
    }
    e.begin = off[0].get<std::uint64_t>();
    e.end = off[1].get<std::uint64_t>();
    if (e.begin > e.end || e.end > header.payload_size) {
      throw FormatError(e.name + ": data_offsets [" + std::to_string(e.begin) + ", " +
                        std::to_string(e.end) + "] out of bounds for payload of " +
                        std::to_string(header.payload_size) + " bytes");
    }
    const std::uint64_t expected = shape_size(e.shape) * dtype_size(e.dtype);
    if (e.end - e.begin != expected) {
      throw ValidationError(e.name + ": truncated payload, " +
                            std::to_string(e.end - e.begin) + " bytes for shape " +
                            shape_string(e.shape) + " " + dtype_name(e.dtype) + " (" +
                            std::to_string(expected) + " expected)");
    }
    header.tensors.push_back(std::move(e));
  }

  std::vector<const TensorEntry*> order;
  for (const auto& e : header.tensors) order.push_back(&e);
  std::sort(order.begin(), order.end(),
            [](const TensorEntry* a, const TensorEntry* b) { return a->begin < b->begin; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->begin < order[i - 1]->end) {
      throw FormatError("data_offsets overlap: " + order[i - 1]->name + " and " +
                        order[i]->name);
    }
  }
  return header;
}

/// Architecture implied by tensor shapes, with metadata for what shapes cannot tell.
inline ViTConfig infer_config(const ContainerHeader& header) {
  ViTConfig cfg;
  std::map<std::string, const TensorEntry*> by_name;
  std::size_t depth = 0;
  for (const auto& e : header.tensors) {
    by_name[e.name] = &e;
    if (e.name.starts_with("blocks.")) {
      const auto dot = e.name.find('.', 7);
      try {
        depth = std::max(depth, std::stoul(e.name.substr(7, dot - 7)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
  auto dim = [&](const char* name, std::size_t axis, std::size_t& out) {
    auto it = by_name.find(name);
    if (it != by_name.end() && it->second->shape.size() > axis) out = it->second->shape[axis];
  };
  cfg.depth = depth;
  dim("cls_token", 1, cfg.width);
  dim("blocks.0.mlp.fc1.weight", 0, cfg.mlp_hidden);
  dim("head.weight", 0, cfg.num_classes);
  std::size_t patch_dim = 0;
  dim("patch_embed.proj.weight", 1, patch_dim);
  if (patch_dim) {
    cfg.patch = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patch_dim) / 3.0)));
  }
  std::size_t tokens = 0;
  dim("pos_embed", 0, tokens);
  if (tokens > 1) {
    const auto grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens) - 1.0)));
    cfg.image_side = grid * cfg.patch;
  }
  detail::metadata_number(header.metadata, "num_heads", cfg.heads);
  detail::metadata_number(header.metadata, "layer_norm_eps", cfg.ln_eps);
  return cfg;
}

/// Loads and validates a checkpoint; half-precision tensors are widened to 32-bit.
/// Throws IoError, FormatError or ValidationError; never returns partial weights.
inline ViTWeights<float> load_checkpoint(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  const ContainerHeader header = parse_container_header(bytes);
  const ViTConfig cfg = infer_config(header);

  std::vector<std::string> violations;
  std::size_t meta_classes = 0;
  if (detail::metadata_number(header.metadata, "num_classes", meta_classes) &&
      meta_classes != cfg.num_classes) {
    violations.push_back("num_classes: metadata says " + std::to_string(meta_classes) +
                         ", head.weight has " + std::to_string(cfg.num_classes) + " rows");
  }

  ViTWeights<float> w;
  w.config = cfg;
  w.blocks.resize(cfg.depth);
  auto read_triplet = [&](const char* key, std::array<double, 3>& out) {
    const auto v = detail::metadata_value(header.metadata, key);
    if (v.is_null()) return;
    if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](auto& x) {
          return x.is_number();
        })) {
      violations.push_back(std::string(key) + ": expected three numbers");
      return;
    }
    for (std::size_t c = 0; c < 3; ++c) out[c] = v[c].template get<double>();
  };
  read_triplet("image_mean", w.image_mean);
  read_triplet("image_std", w.image_std);
  if (const auto names = detail::metadata_value(header.metadata, "class_names");
      names.is_array()) {
    for (const auto& n : names) {
      if (n.is_string()) w.class_names.push_back(n.get<std::string>());
      else violations.push_back("class_names: entries must be strings");
    }
  }

  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& e : header.tensors) by_name[e.name] = &e;
  std::set<std::string> used;
  const unsigned char* payload = bytes.data() + header.payload_offset;
  for_each_tensor(w, [&](const std::string& name, Tensor<float>& slot) {
    auto it = by_name.find(name);
    if (it == by_name.end()) return;  // reported as missing by validate_weights
    used.insert(name);
    slot = detail::decode_tensor(*it->second, payload);
  });
  for (const auto& e : header.tensors) {
    if (!used.count(e.name)) violations.push_back(e.name + ": unexpected tensor");
  }

  for (auto& v : validate_weights(w, cfg)) violations.push_back(std::move(v));
  if (!violations.empty()) {
    std::string msg = "invalid checkpoint " + path.string() + ":";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return w;
}

}  // namespace vitcam
