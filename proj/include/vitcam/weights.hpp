#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vitcam/config.hpp"
#include "vitcam/tensor.hpp"

namespace vitcam {

template <typename T>
struct BlockWeights {
  Tensor<T> norm1_weight, norm1_bias;
  Tensor<T> qkv_weight, qkv_bias;  // fused [3P x P]: rows q | k | v, heads contiguous
  Tensor<T> proj_weight, proj_bias;
  Tensor<T> norm2_weight, norm2_bias;
  Tensor<T> fc1_weight, fc1_bias;
  Tensor<T> fc2_weight, fc2_bias;
};

/**
 * Full parameter set of a class-token ViT. Linear weights use the
 * out x in layout. The patch projection flattens a patch channel-major:
 * element c * patch^2 + y * patch + x.
 */
template <typename T>
struct ViTWeights {
  ViTConfig config;

  Tensor<T> patch_weight, patch_bias;
  Tensor<T> cls_token;
  Tensor<T> pos_embed;
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> norm_weight, norm_bias;
  Tensor<T> head_weight, head_bias;

  std::array<double, 3> image_mean{0.5, 0.5, 0.5};
  std::array<double, 3> image_std{0.5, 0.5, 0.5};
  std::vector<std::string> class_names;
};

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Canonical tensor names and shapes for a configuration, in container order.
inline std::vector<TensorSpec> canonical_tensor_specs(const ViTConfig& cfg) {
  const std::size_t p = cfg.width;
  std::vector<TensorSpec> specs{
      {"patch_embed.proj.weight", {p, cfg.patch_dim()}},
      {"patch_embed.proj.bias", {p}},
      {"cls_token", {1, p}},
      {"pos_embed", {cfg.tokens(), p}},
  };
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    const std::string b = "blocks." + std::to_string(k) + ".";
    specs.push_back({b + "norm1.weight", {p}});
    specs.push_back({b + "norm1.bias", {p}});
    specs.push_back({b + "attn.qkv.weight", {3 * p, p}});
    specs.push_back({b + "attn.qkv.bias", {3 * p}});
    specs.push_back({b + "attn.proj.weight", {p, p}});
    specs.push_back({b + "attn.proj.bias", {p}});
    specs.push_back({b + "norm2.weight", {p}});
    specs.push_back({b + "norm2.bias", {p}});
    specs.push_back({b + "mlp.fc1.weight", {cfg.mlp_hidden, p}});
    specs.push_back({b + "mlp.fc1.bias", {cfg.mlp_hidden}});
    specs.push_back({b + "mlp.fc2.weight", {p, cfg.mlp_hidden}});
    specs.push_back({b + "mlp.fc2.bias", {p}});
  }
  specs.push_back({"norm.weight", {p}});
  specs.push_back({"norm.bias", {p}});
  specs.push_back({"head.weight", {cfg.num_classes, p}});
  specs.push_back({"head.bias", {cfg.num_classes}});
  return specs;
}

/// Visits every tensor slot with its canonical name. Block slots are visited
/// for blocks that currently exist in `w.blocks`.
template <typename W, typename F>
void for_each_tensor(W& w, F&& fn) {
  fn("patch_embed.proj.weight", w.patch_weight);
  fn("patch_embed.proj.bias", w.patch_bias);
  fn("cls_token", w.cls_token);
  fn("pos_embed", w.pos_embed);
  for (std::size_t k = 0; k < w.blocks.size(); ++k) {
    auto& blk = w.blocks[k];
    const std::string b = "blocks." + std::to_string(k) + ".";
    fn(b + "norm1.weight", blk.norm1_weight);
    fn(b + "norm1.bias", blk.norm1_bias);
    fn(b + "attn.qkv.weight", blk.qkv_weight);
    fn(b + "attn.qkv.bias", blk.qkv_bias);
    fn(b + "attn.proj.weight", blk.proj_weight);
    fn(b + "attn.proj.bias", blk.proj_bias);
    fn(b + "norm2.weight", blk.norm2_weight);
    fn(b + "norm2.bias", blk.norm2_bias);
    fn(b + "mlp.fc1.weight", blk.fc1_weight);
    fn(b + "mlp.fc1.bias", blk.fc1_bias);
    fn(b + "mlp.fc2.weight", blk.fc2_weight);
    fn(b + "mlp.fc2.bias", blk.fc2_bias);
  }
  fn("norm.weight", w.norm_weight);
  fn("norm.bias", w.norm_bias);
  fn("head.weight", w.head_weight);
  fn("head.bias", w.head_bias);
}

/// Cross-checks every tensor against `cfg`. Collects all violations.
template <typename T>
std::vector<std::string> validate_weights(const ViTWeights<T>& w, const ViTConfig& cfg) {
  std::vector<std::string> out = cfg.violations();
  if (!out.empty()) return out;  // shapes below are meaningless for a broken config
  if (w.blocks.size() != cfg.depth) {
    out.push_back("blocks: expected " + std::to_string(cfg.depth) + ", found " +
                  std::to_string(w.blocks.size()));
  }
  std::vector<TensorSpec> specs = canonical_tensor_specs(cfg);
  std::size_t idx = 0;
  for_each_tensor(w, [&](const std::string& name, const Tensor<T>& t) {
    const TensorSpec* spec = nullptr;
    // Fast path: visitation order mirrors canonical order when depth agrees.
    if (idx < specs.size() && specs[idx].name == name) {
      spec = &specs[idx];
    } else {
      for (const auto& s : specs)
        if (s.name == name) spec = &s;
    }
    ++idx;
    if (!spec) {
      out.push_back(name + ": unexpected tensor");
      return;
    }
    if (t.empty() && shape_size(spec->shape) != 0) {
      out.push_back(name + ": missing");
    } else if (t.shape() != spec->shape) {
      out.push_back(name + ": shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(spec->shape));
    } else if (!t.all_finite()) {
      out.push_back(name + ": non-finite values");
    }
  });
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(w.image_std[c] > 0.0)) out.push_back("image_std: entries must be positive");
  }
  if (!w.class_names.empty() && w.class_names.size() != cfg.num_classes) {
    out.push_back("class_names: " + std::to_string(w.class_names.size()) +
                  " names for " + std::to_string(cfg.num_classes) + " classes");
  }
  return out;
}

template <typename U, typename T>
ViTWeights<U> cast_weights(const ViTWeights<T>& w) {
  ViTWeights<U> out;
  out.config = w.config;
  out.image_mean = w.image_mean;
  out.image_std = w.image_std;
  out.class_names = w.class_names;
  out.blocks.resize(w.blocks.size());
  std::vector<const Tensor<T>*> src;
  for_each_tensor(w, [&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

/// Random parameters of the canonical shapes. Linear weights are drawn with
/// standard deviation `scale`; LN gains scatter around 1.
template <typename T>
ViTWeights<T> random_weights(const ViTConfig& cfg, std::uint64_t seed, double scale = 0.2) {
  ViTWeights<T> w;
  w.config = cfg;
  w.blocks.resize(cfg.depth);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto specs = canonical_tensor_specs(cfg);
  std::size_t i = 0;
  for_each_tensor(w, [&](const std::string& name, Tensor<T>& t) {
    t = Tensor<T>(specs[i++].shape);
    const bool ln_gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                         name == "norm.weight";
    for (T& v : t.data()) {
      const double z = normal(rng);
      v = static_cast<T>(ln_gain ? 1.0 + 0.1 * z : scale * z);
    }
  });
  return w;
}

}  // namespace vitcam
