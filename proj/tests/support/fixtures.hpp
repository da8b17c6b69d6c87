#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vitcam/config.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/weights.hpp"

namespace vitcam::testing {

/// K=3, H=2, P=16, n=2 toy used by the gradient oracles.
inline ViTConfig tiny_config() {
  ViTConfig cfg;
  cfg.depth = 3;
  cfg.heads = 2;
  cfg.width = 16;
  cfg.mlp_hidden = 32;
  cfg.patch = 4;
  cfg.image_side = 8;
  cfg.num_classes = 5;
  return cfg;
}

/// 8x8 patch grid at 32 px, big enough for non-trivial heatmaps and boxes.
inline ViTConfig small_config() {
  ViTConfig cfg;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.width = 16;
  cfg.mlp_hidden = 32;
  cfg.patch = 4;
  cfg.image_side = 32;
  cfg.num_classes = 4;
  return cfg;
}

template <typename T>
Tensor<T> random_image(const ViTConfig& cfg, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<T> img({cfg.image_side, cfg.image_side, cfg.channels});
  for (T& v : img.data()) v = static_cast<T>(normal(rng));
  return img;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(normal(rng));
  return t;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vitcam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vitcam::testing
