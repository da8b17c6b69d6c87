#pragma once

// Pre-norm ViT forward pass that keeps everything the class-token backward
// pass needs: scaled attention logits, their softmax, value matrices, the two
// residual snapshots of every block and the layer-norm statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vitcam/config.hpp"
#include "vitcam/error.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/weights.hpp"

namespace vitcam {

template <typename T>
struct BlockTrace {
  Tensor<T> logits;  // [H x N x N], scaled by 1/sqrt(d_head), pre-softmax
  Tensor<T> probs;   // [H x N x N], row-wise softmax of logits
  Tensor<T> values;  // [H x N x d_head]
  Tensor<T> e_r1;    // [N x P] residual stream after the attention sublayer
  Tensor<T> e_r2;    // [N x P] residual stream after the MLP sublayer
  LayerNormStats<T> ln1, ln2;
};

template <typename T>
struct ForwardTrace {
  Tensor<T> embedding;  // [N x P] input to block 0
  std::vector<BlockTrace<T>> blocks;
  T final_ln_mean{};  // final layer norm, class-token row only
  T final_ln_rstd{};
  Tensor<T> logits;  // [num_classes]

  std::size_t predicted_class() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    return best;
  }
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  ForwardTrace<T> trace;
};

/// Image [side x side x C] (already normalized) -> token embeddings [N x P].
/// Token 0 is the class token; token 1 + r * n + c is grid patch (r, c).
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& image, const ViTWeights<T>& w) {
  const ViTConfig& cfg = w.config;
  const std::size_t side = cfg.image_side, ch = cfg.channels, p = cfg.patch;
  if (image.shape() != Shape{side, side, ch}) {
    throw DimensionError("patch_embed: image " + shape_string(image.shape()) +
                         ", expected " + shape_string({side, side, ch}));
  }
  const std::size_t n = cfg.grid_side();
  Tensor<T> patches({n * n, cfg.patch_dim()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      auto dst = patches.row(r * n + c);
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            dst[k * p * p + y * p + x] = image(r * p + y, c * p + x, k);
    }
  }
  const Tensor<T> projected = linear(patches, w.patch_weight, w.patch_bias);
  Tensor<T> tokens({cfg.tokens(), cfg.width});
  for (std::size_t j = 0; j < cfg.width; ++j) tokens(0, j) = w.cls_token[j] + w.pos_embed(0, j);
  for (std::size_t i = 0; i < n * n; ++i)
    for (std::size_t j = 0; j < cfg.width; ++j)
      tokens(i + 1, j) = projected(i, j) + w.pos_embed(i + 1, j);
  return tokens;
}

/// E_r1 = E_in + Proj(MHSA(LN1(E_in))). Fills the attention fields of `trace`.
template <typename T>
Tensor<T> attention_sublayer(const Tensor<T>& e_in, const BlockWeights<T>& b,
                             const ViTConfig& cfg, BlockTrace<T>& trace) {
  const std::size_t n_tok = e_in.dim(0), p = cfg.width, heads = cfg.heads;
  const std::size_t dh = cfg.head_dim();
  const Tensor<T> normed =
      layer_norm(e_in, b.norm1_weight, b.norm1_bias, static_cast<T>(cfg.ln_eps), &trace.ln1);
  const Tensor<T> qkv = linear(normed, b.qkv_weight, b.qkv_bias);
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  trace.logits = Tensor<T>({heads, n_tok, n_tok});
  trace.probs = Tensor<T>({heads, n_tok, n_tok});
  trace.values = Tensor<T>({heads, n_tok, dh});
  Tensor<T> mixed({n_tok, p});
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> q({n_tok, dh}), kt({dh, n_tok}), v({n_tok, dh});
    for (std::size_t i = 0; i < n_tok; ++i) {
      for (std::size_t d = 0; d < dh; ++d) {
        q(i, d) = qkv(i, h * dh + d);
        kt(d, i) = qkv(i, p + h * dh + d);
        v(i, d) = qkv(i, 2 * p + h * dh + d);
      }
    }
    Tensor<T> logits = matmul(q, kt);
    for (T& x : logits.data()) x *= scale;
    const Tensor<T> probs = softmax_rows(logits);
    const Tensor<T> out = matmul(probs, v);
    for (std::size_t i = 0; i < n_tok; ++i)
      for (std::size_t d = 0; d < dh; ++d) mixed(i, h * dh + d) = out(i, d);
    std::copy(logits.data().begin(), logits.data().end(), trace.logits.row(h).begin());
    std::copy(probs.data().begin(), probs.data().end(), trace.probs.row(h).begin());
    std::copy(v.data().begin(), v.data().end(), trace.values.row(h).begin());
  }
  Tensor<T> e_r1 = linear(mixed, b.proj_weight, b.proj_bias);
  for (std::size_t i = 0; i < e_r1.size(); ++i) e_r1[i] += e_in[i];
  return e_r1;
}

/// E_r2 = E_r1 + fc2(GELU(fc1(LN2(E_r1)))).
template <typename T>
Tensor<T> mlp_sublayer(const Tensor<T>& e_r1, const BlockWeights<T>& b, const ViTConfig& cfg,
                       LayerNormStats<T>* stats = nullptr) {
  const Tensor<T> normed =
      layer_norm(e_r1, b.norm2_weight, b.norm2_bias, static_cast<T>(cfg.ln_eps), stats);
  const Tensor<T> hidden = gelu(linear(normed, b.fc1_weight, b.fc1_bias));
  Tensor<T> e_r2 = linear(hidden, b.fc2_weight, b.fc2_bias);
  for (std::size_t i = 0; i < e_r2.size(); ++i) e_r2[i] += e_r1[i];
  return e_r2;
}

/// One pre-norm encoder block. Returns E_out (== E_r2) and records the trace.
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& e_in, const ViTWeights<T>& w, std::size_t k,
                        BlockTrace<T>& trace) {
  if (k >= w.blocks.size()) {
    throw DomainError("encoder_block: block index " + std::to_string(k) + " out of range");
  }
  const BlockWeights<T>& b = w.blocks[k];
  trace.e_r1 = attention_sublayer(e_in, b, w.config, trace);
  trace.e_r2 = mlp_sublayer(trace.e_r1, b, w.config, &trace.ln2);
  if (!trace.e_r1.all_finite() || !trace.e_r2.all_finite()) {
    throw NumericError("non-finite activations in block " + std::to_string(k));
  }
  return trace.e_r2;
}

/// Final layer norm and classifier applied to the class-token row only.
template <typename T>
Tensor<T> classifier_head(std::span<const T> cls_row, const ViTWeights<T>& w,
                          T* ln_mean = nullptr, T* ln_rstd = nullptr) {
  const std::vector<T> normed = layer_norm_vector<T>(
      cls_row, w.norm_weight, w.norm_bias, static_cast<T>(w.config.ln_eps), ln_mean, ln_rstd);
  std::vector<T> logits = matvec<T>(w.head_weight, normed, &w.head_bias);
  const std::size_t n = logits.size();
  return Tensor<T>({n}, std::move(logits));
}

template <typename T>
ForwardResult<T> forward(const Tensor<T>& image, const ViTWeights<T>& w) {
  if (w.blocks.size() != w.config.depth) {
    throw ValidationError("forward: weights hold " + std::to_string(w.blocks.size()) +
                          " blocks, config says " + std::to_string(w.config.depth));
  }
  ForwardResult<T> res;
  ForwardTrace<T>& tr = res.trace;
  tr.embedding = patch_embed(image, w);
  tr.blocks.resize(w.config.depth);
  const Tensor<T>* e = &tr.embedding;
  for (std::size_t k = 0; k < w.config.depth; ++k) {
    encoder_block(*e, w, k, tr.blocks[k]);
    e = &tr.blocks[k].e_r2;
  }
  tr.logits = classifier_head<T>(e->row(0), w, &tr.final_ln_mean, &tr.final_ln_rstd);
  if (!tr.logits.all_finite()) throw NumericError("non-finite logits");
  res.logits = tr.logits;
  return res;
}

/// Softmax probability of class c for one image.
template <typename T>
T class_probability(const Tensor<T>& image, const ViTWeights<T>& w, std::size_t c) {
  const Tensor<T> logits = forward(image, w).logits;
  return softmax_row(logits)[c];
}

}  // namespace vitcam
