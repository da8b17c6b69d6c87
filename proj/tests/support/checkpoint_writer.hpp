#pragma once

// Test-side writer for the checkpoint container. The library only reads
// checkpoints; tests build them here and then tamper with the header.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitcam/checkpoint.hpp"
#include "vitcam/weights.hpp"

namespace vitcam::testing {

struct ContainerImage {
  nlohmann::ordered_json header;  // tensor table plus "__metadata__"
  std::vector<unsigned char> payload;
};

/// Round-to-nearest-even binary32 -> binary16 for normal and subnormal ranges.
inline std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const int exp = static_cast<int>((x >> 23) & 0xffu) - 127 + 15;
  std::uint32_t mant = x & 0x7fffffu;
  if (((x >> 23) & 0xffu) == 0xffu) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0));
  if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (exp <= 0) {
    if (exp < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - exp;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t mid = 1u << (shift - 1);
    if (rem > mid || (rem == mid && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
  return static_cast<std::uint16_t>(sign | half);
}

inline ContainerImage make_container(const ViTWeights<float>& w, DType dtype = DType::f32) {
  ContainerImage img;
  std::uint64_t offset = 0;
  for_each_tensor(w, [&](const std::string& name, const Tensor<float>& t) {
    const std::size_t bytes = t.size() * dtype_size(dtype);
    const std::size_t start = img.payload.size();
    img.payload.resize(start + bytes);
    unsigned char* dst = img.payload.data() + start;
    for (std::size_t i = 0; i < t.size(); ++i) {
      switch (dtype) {
        case DType::f32:
          std::memcpy(dst + 4 * i, &t[i], 4);
          break;
        case DType::f64: {
          const double d = t[i];
          std::memcpy(dst + 8 * i, &d, 8);
          break;
        }
        case DType::f16: {
          const std::uint16_t h = float_to_half(t[i]);
          std::memcpy(dst + 2 * i, &h, 2);
          break;
        }
        case DType::bf16: {
          const auto h = static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(t[i]) >> 16);
          std::memcpy(dst + 2 * i, &h, 2);
          break;
        }
      }
    }
    img.header[name] = {{"dtype", dtype_name(dtype)},
                        {"shape", t.shape()},
                        {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  });
  nlohmann::ordered_json meta;
  meta["num_classes"] = w.config.num_classes;
  meta["num_heads"] = w.config.heads;
  meta["layer_norm_eps"] = w.config.ln_eps;
  meta["image_mean"] = w.image_mean;
  meta["image_std"] = w.image_std;
  if (!w.class_names.empty()) meta["class_names"] = w.class_names;
  img.header[kMetadataKey] = meta;
  return img;
}

inline std::vector<unsigned char> serialize(const ContainerImage& img) {
  const std::string header = img.header.dump();
  const std::uint64_t len = header.size();
  std::vector<unsigned char> out(8 + header.size());
  std::memcpy(out.data(), &len, 8);
  std::memcpy(out.data() + 8, header.data(), header.size());
  out.insert(out.end(), img.payload.begin(), img.payload.end());
  return out;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_checkpoint(const std::filesystem::path& path, const ViTWeights<float>& w,
                             DType dtype = DType::f32) {
  write_bytes(path, serialize(make_container(w, dtype)));
}

}  // namespace vitcam::testing
