#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vitcam {

/// Architecture hyperparameters. Defaults describe ViT-Base/16 at 224 px.
struct ViTConfig {
  std::size_t depth = 12;        // encoder blocks (K)
  std::size_t heads = 12;        // attention heads per block (H)
  std::size_t width = 768;       // hidden width (P)
  std::size_t mlp_hidden = 3072;
  std::size_t patch = 16;
  std::size_t image_side = 224;
  std::size_t channels = 3;
  std::size_t num_classes = 1000;
  double ln_eps = 1e-6;

  std::size_t grid_side() const { return patch ? image_side / patch : 0; }
  std::size_t tokens() const { return grid_side() * grid_side() + 1; }
  std::size_t head_dim() const { return heads ? width / heads : 0; }
  std::size_t patch_dim() const { return patch * patch * channels; }

  /// Human-readable list of broken structural invariants; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (depth == 0) out.emplace_back("config: depth must be >= 1");
    if (heads == 0 || width % heads != 0) {
      out.emplace_back("config: width " + std::to_string(width) +
                       " is not divisible by heads " + std::to_string(heads));
    }
    if (patch == 0 || image_side % patch != 0) {
      out.emplace_back("config: image_side " + std::to_string(image_side) +
                       " is not a multiple of patch " + std::to_string(patch));
    }
    if (mlp_hidden == 0) out.emplace_back("config: mlp_hidden must be >= 1");
    if (num_classes == 0) out.emplace_back("config: num_classes must be >= 1");
    if (!(ln_eps > 0.0)) out.emplace_back("config: ln_eps must be positive");
    return out;
  }
};

inline ViTConfig vit_base_config(std::size_t num_classes = 1000) {
  ViTConfig cfg;
  cfg.num_classes = num_classes;
  return cfg;
}

}  // namespace vitcam
