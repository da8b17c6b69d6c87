#pragma once

// Attention-guided class activation maps for class-token ViTs.
//
// Feature maps are the sigmoid of each head's class-token attention-logit row.
// Gradients travel from the class logit back along the residual stream: the
// attention sublayers between blocks are crossed as identity, the MLP
// sublayers with their exact class-token-row Jacobian. At every block the
// residual gradient is pushed through the output projection onto the value
// rows, treating softmax as identity, which yields one weight per token.
// The map sums sigmoid(logits) * relu(weights) over all blocks and heads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vitcam/error.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/vit.hpp"
#include "vitcam/weights.hpp"

namespace vitcam {

enum class Method { ours, raw_attention, rollout };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::ours:
      return "ours";
    case Method::raw_attention:
      return "raw_attention";
    case Method::rollout:
      return "rollout";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "ours") return Method::ours;
  if (s == "raw_attention") return Method::raw_attention;
  if (s == "rollout") return Method::rollout;
  return std::nullopt;
}

/// maps[k][h] = sigmoid(class-token row of the scaled logits of head h, block k).
template <typename T>
struct FeatureMaps {
  std::vector<std::vector<Tensor<T>>> maps;
};

template <typename T>
struct GradientBundle {
  std::vector<Tensor<T>> beta;                // [K] of [P]
  std::vector<std::vector<Tensor<T>>> alpha;  // [K][H] of [N]
  std::size_t target_class = 0;
};

/// Softmax-aware counterpart of alpha, for measuring how much the softmax
/// Jacobian diagonal would amplify each token relative to sigmoid.
template <typename T>
struct DiagnosticGradients {
  std::vector<std::vector<Tensor<T>>> alpha_prime;  // alpha * ratio
  std::vector<std::vector<Tensor<T>>> ratio;        // S(1-S) / (G(1-G))
};

template <typename T>
struct Cam {
  Tensor<T> row;   // [N], class-token entry included
  Tensor<T> grid;  // [n x n], grid(r, c) == row[1 + r * n + c]
  std::size_t class_index = 0;
  Method method = Method::ours;
};

namespace detail {

template <typename T>
Cam<T> make_cam(Tensor<T> row, std::size_t grid_side, std::size_t c, Method m) {
  if (row.size() != grid_side * grid_side + 1) {
    throw DimensionError("cam row of length " + std::to_string(row.size()) +
                         " does not fit a " + std::to_string(grid_side) + "x" +
                         std::to_string(grid_side) + " grid");
  }
  Cam<T> cam;
  cam.grid = Tensor<T>({grid_side, grid_side},
                       std::vector<T>(row.data().begin() + 1, row.data().end()));
  cam.row = std::move(row);
  cam.class_index = c;
  cam.method = m;
  return cam;
}

template <typename T>
void require_complete(const ForwardTrace<T>& trace, const ViTConfig& cfg) {
  if (trace.blocks.size() != cfg.depth) {
    throw ValidationError("trace holds " + std::to_string(trace.blocks.size()) +
                          " blocks, expected " + std::to_string(cfg.depth));
  }
}

/// VJP of the class-token row map x -> x + fc2(gelu(fc1(LN2(x)))) of block k.
template <typename T>
std::vector<T> mlp_residual_vjp(std::span<const T> grad, const ForwardTrace<T>& trace,
                                const ViTWeights<T>& w, std::size_t k) {
  const BlockWeights<T>& b = w.blocks[k];
  const BlockTrace<T>& bt = trace.blocks[k];
  const auto x = bt.e_r1.row(0);
  const T mean = bt.ln2.mean[0], rstd = bt.ln2.rstd[0];
  const std::size_t p = x.size();

  std::vector<T> normed(p);
  for (std::size_t j = 0; j < p; ++j)
    normed[j] = (x[j] - mean) * rstd * b.norm2_weight[j] + b.norm2_bias[j];
  const std::vector<T> pre = matvec<T>(b.fc1_weight, normed, &b.fc1_bias);

  std::vector<T> d_hidden = vecmat<T>(grad, b.fc2_weight);
  for (std::size_t m = 0; m < d_hidden.size(); ++m) d_hidden[m] *= gelu_derivative(pre[m]);
  const std::vector<T> d_normed = vecmat<T>(d_hidden, b.fc1_weight);
  std::vector<T> dx = layer_norm_vjp<T>(d_normed, x, b.norm2_weight, mean, rstd);
  for (std::size_t j = 0; j < p; ++j) dx[j] += grad[j];
  return dx;
}

}  // namespace detail

template <typename T>
FeatureMaps<T> feature_maps(const ForwardTrace<T>& trace) {
  FeatureMaps<T> fm;
  fm.maps.resize(trace.blocks.size());
  for (std::size_t k = 0; k < trace.blocks.size(); ++k) {
    const Tensor<T>& logits = trace.blocks[k].logits;
    const std::size_t heads = logits.dim(0), n_tok = logits.dim(1);
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<T> g = sigmoid_map<T>(logits.row(h).subspan(0, n_tok));
      fm.maps[k].emplace_back(Shape{n_tok}, std::move(g));
    }
  }
  return fm;
}

/// Exact gradient of logit c with respect to the class-token row of E_r1 in the last block.
template <typename T>
Tensor<T> grad_head(const ForwardTrace<T>& trace, const ViTWeights<T>& w, std::size_t c) {
  const ViTConfig& cfg = w.config;
  if (c >= cfg.num_classes) {
    throw DomainError("class index " + std::to_string(c) + " >= num_classes " +
                      std::to_string(cfg.num_classes));
  }
  detail::require_complete(trace, cfg);
  const std::size_t last = cfg.depth - 1;
  const auto head_row = w.head_weight.row(c);
  const std::vector<T> d_final = layer_norm_vjp<T>(
      head_row, trace.blocks[last].e_r2.row(0), w.norm_weight, trace.final_ln_mean,
      trace.final_ln_rstd);
  std::vector<T> beta = detail::mlp_residual_vjp<T>(d_final, trace, w, last);
  const std::size_t n = beta.size();
  return Tensor<T>({n}, std::move(beta));
}

/// beta_k from beta_{k+1}: identity across the attention sublayer of block k+1,
/// exact VJP through the MLP sublayer of block k.
template <typename T>
Tensor<T> grad_step(const Tensor<T>& beta_next, const ForwardTrace<T>& trace,
                    const ViTWeights<T>& w, std::size_t k) {
  if (w.config.depth < 2 || k > w.config.depth - 2) {
    throw DomainError("grad_step: block index " + std::to_string(k) + " out of range");
  }
  detail::require_complete(trace, w.config);
  std::vector<T> beta = detail::mlp_residual_vjp<T>(beta_next.data(), trace, w, k);
  const std::size_t n = beta.size();
  return Tensor<T>({n}, std::move(beta));
}

/// alpha[j] = (beta_k . W_proj[:, head h]) . V_h[j]: gradient of beta_k . E_r1[0]
/// with respect to the class-token attention probabilities of head h.
template <typename T>
Tensor<T> grad_attention_row(const Tensor<T>& beta_k, const ForwardTrace<T>& trace,
                             const ViTWeights<T>& w, std::size_t k, std::size_t h) {
  const ViTConfig& cfg = w.config;
  if (k >= cfg.depth || h >= cfg.heads) {
    throw DomainError("grad_attention_row: (block " + std::to_string(k) + ", head " +
                      std::to_string(h) + ") out of range");
  }
  const std::size_t dh = cfg.head_dim();
  const std::vector<T> u_full = vecmat<T>(beta_k.data(), w.blocks[k].proj_weight);
  const std::span<const T> u(u_full.data() + h * dh, dh);
  const Tensor<T>& values = trace.blocks[k].values;
  const std::size_t n_tok = values.dim(1);
  Tensor<T> alpha({n_tok});
  const auto vh = values.row(h);
  for (std::size_t j = 0; j < n_tok; ++j) alpha[j] = dot<T>(u, vh.subspan(j * dh, dh));
  return alpha;
}

template <typename T>
GradientBundle<T> gradients(const ForwardTrace<T>& trace, const ViTWeights<T>& w,
                            std::size_t c) {
  const std::size_t depth = w.config.depth;
  GradientBundle<T> g;
  g.target_class = c;
  g.beta.resize(depth);
  g.beta[depth - 1] = grad_head(trace, w, c);
  for (std::size_t k = depth - 1; k-- > 0;) g.beta[k] = grad_step(g.beta[k + 1], trace, w, k);
  g.alpha.resize(depth);
  for (std::size_t k = 0; k < depth; ++k)
    for (std::size_t h = 0; h < w.config.heads; ++h)
      g.alpha[k].push_back(grad_attention_row(g.beta[k], trace, w, k, h));
  return g;
}

/// alpha' through the exact softmax-Jacobian diagonal over the sigmoid
/// derivative, alongside the ratio S(1-S) / (G(1-G)) computed directly.
template <typename T>
DiagnosticGradients<T> diagnostic_gradients(const GradientBundle<T>& g,
                                            const ForwardTrace<T>& trace) {
  DiagnosticGradients<T> d;
  d.alpha_prime.resize(g.alpha.size());
  d.ratio.resize(g.alpha.size());
  for (std::size_t k = 0; k < g.alpha.size(); ++k) {
    const BlockTrace<T>& bt = trace.blocks[k];
    const std::size_t n_tok = bt.probs.dim(1);
    for (std::size_t h = 0; h < g.alpha[k].size(); ++h) {
      const auto s = bt.probs.row(h).subspan(0, n_tok);
      const auto a = bt.logits.row(h).subspan(0, n_tok);
      const Tensor<T> jac = softmax_jacobian<T>(s);
      Tensor<T> prime({n_tok}), ratio({n_tok});
      for (std::size_t j = 0; j < n_tok; ++j) {
        // Sigmoid derivative e^{-|a|} / (1 + e^{-|a|})^2, stable for large |a|.
        const T e = std::exp(-std::abs(a[j]));
        const T dsig = e / ((T{1} + e) * (T{1} + e));
        prime[j] = g.alpha[k][h][j] * jac(j, j) / dsig;
        const T gj = sigmoid(a[j]), gj_c = sigmoid(-a[j]);
        ratio[j] = s[j] * (T{1} - s[j]) / (gj * gj_c);
      }
      d.alpha_prime[k].push_back(std::move(prime));
      d.ratio[k].push_back(std::move(ratio));
    }
  }
  return d;
}

/// L = sum_k sum_h F[k][h] * relu(alpha[k][h]); the class-token entry is
/// dropped and the rest reshaped row-major into the patch grid.
template <typename T>
Cam<T> assemble_cam(const FeatureMaps<T>& f, const GradientBundle<T>& g, const ViTConfig& cfg) {
  if (f.maps.size() != cfg.depth || g.alpha.size() != cfg.depth) {
    throw ValidationError("assemble_cam: feature maps or gradients do not cover all blocks");
  }
  const std::size_t n_tok = cfg.tokens();
  Tensor<T> row({n_tok});
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    if (f.maps[k].size() != cfg.heads || g.alpha[k].size() != cfg.heads) {
      throw ValidationError("assemble_cam: block " + std::to_string(k) +
                            " does not cover all heads");
    }
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Tensor<T>& fm = f.maps[k][h];
      const Tensor<T>& al = g.alpha[k][h];
      if (fm.size() != n_tok || al.size() != n_tok) {
        throw ValidationError("assemble_cam: entry (" + std::to_string(k) + ", " +
                              std::to_string(h) + ") has the wrong length");
      }
      for (std::size_t j = 0; j < n_tok; ++j) row[j] += fm[j] * std::max(al[j], T{0});
    }
  }
  return detail::make_cam(std::move(row), cfg.grid_side(), g.target_class, Method::ours);
}

/// Mean over all blocks and heads of the class-token softmax attention row.
template <typename T>
Cam<T> raw_attention_baseline(const ForwardTrace<T>& trace, const ViTConfig& cfg,
                              std::size_t c = 0) {
  detail::require_complete(trace, cfg);
  const std::size_t n_tok = cfg.tokens();
  Tensor<T> row({n_tok});
  std::size_t count = 0;
  for (const BlockTrace<T>& bt : trace.blocks) {
    for (std::size_t h = 0; h < bt.probs.dim(0); ++h, ++count) {
      const auto s = bt.probs.row(h);
      for (std::size_t j = 0; j < n_tok; ++j) row[j] += s[j];
    }
  }
  for (T& v : row.data()) v /= static_cast<T>(count);
  return detail::make_cam(std::move(row), cfg.grid_side(), c, Method::raw_attention);
}

/// Head-averaged attention augmented with the residual (0.5 A + 0.5 I, rows
/// renormalized), multiplied across blocks: R = A_K ... A_1. Class-independent.
template <typename T>
Tensor<T> rollout_matrix(const ForwardTrace<T>& trace) {
  Tensor<T> rollout;
  for (std::size_t k = 0; k < trace.blocks.size(); ++k) {
    const Tensor<T>& probs = trace.blocks[k].probs;
    const std::size_t heads = probs.dim(0), n_tok = probs.dim(1);
    Tensor<T> aug({n_tok, n_tok});
    for (std::size_t h = 0; h < heads; ++h) {
      const auto s = probs.row(h);
      for (std::size_t i = 0; i < n_tok * n_tok; ++i) aug[i] += s[i];
    }
    for (std::size_t i = 0; i < n_tok; ++i) {
      T sum{0};
      for (std::size_t j = 0; j < n_tok; ++j) {
        T v = T{0.5} * aug(i, j) / static_cast<T>(heads);
        if (i == j) v += T{0.5};
        aug(i, j) = v;
        sum += v;
      }
      for (std::size_t j = 0; j < n_tok; ++j) aug(i, j) /= sum;
    }
    rollout = (k == 0) ? std::move(aug) : matmul(aug, rollout);
  }
  return rollout;
}

template <typename T>
Cam<T> attention_rollout_baseline(const ForwardTrace<T>& trace, const ViTConfig& cfg,
                                  std::size_t c = 0) {
  detail::require_complete(trace, cfg);
  const Tensor<T> r = rollout_matrix(trace);
  return detail::make_cam(from_span<T>(r.row(0)), cfg.grid_side(), c, Method::rollout);
}

/// One-call explanation of a traced image for class c.
template <typename T>
Cam<T> explain(const ForwardTrace<T>& trace, const ViTWeights<T>& w, std::size_t c,
               Method method) {
  switch (method) {
    case Method::ours:
      return assemble_cam(feature_maps(trace), gradients(trace, w, c), w.config);
    case Method::raw_attention:
      return raw_attention_baseline(trace, w.config, c);
    case Method::rollout:
      return attention_rollout_baseline(trace, w.config, c);
  }
  throw DomainError("unknown method");
}

}  // namespace vitcam
