#pragma once

// Central finite-difference oracles for the class-token gradients, built on
// the straight-line reference model rather than the library kernels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "support/reference_vit.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/vit.hpp"

namespace vitcam::testing {

/// Gradient of a scalar function by central differences with step h.
inline Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x,
                              double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

/// ||a - b|| / ||b|| (absolute when b vanishes).
template <typename A>
double relative_error(const A& a, const Vec& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline Vec to_vec(std::span<const double> s) { return Vec(s.begin(), s.end()); }

/// d y^c / d E_r1^K[0]: the last MLP residual, final LN and head are row-wise,
/// so perturbing row 0 alone gives the full gradient.
inline Vec fd_grad_head(const ViTWeights<double>& w, const ForwardTrace<double>& tr,
                        std::size_t c) {
  const std::size_t last = w.config.depth - 1;
  return central_difference(
      [&](const Vec& x) { return ref_head(w, ref_mlp_residual(w, last, x))[c]; },
      to_vec(tr.blocks[last].e_r1.row(0)));
}

/// beta_next . (E_r1^k[0] -> E_r2^k[0]) differentiated at the traced point.
inline Vec fd_grad_step(const ViTWeights<double>& w, const ForwardTrace<double>& tr,
                        const Tensor<double>& beta_next, std::size_t k) {
  return central_difference(
      [&](const Vec& x) {
        const Vec y = ref_mlp_residual(w, k, x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += beta_next[i] * y[i];
        return s;
      },
      to_vec(tr.blocks[k].e_r1.row(0)));
}

/// beta_k . (S(A_h^k)[0] -> E_r1^k[0]) differentiated at the traced probabilities.
inline Vec fd_grad_attention_row(const ViTWeights<double>& w, const Tensor<double>& image,
                                 const Tensor<double>& beta_k, std::size_t k, std::size_t h) {
  const RefForward ref = ref_forward(w, image);
  const Vec e_in_row0 = k == 0 ? ref_embed(w, image)[0] : ref.e_r2[k - 1][0];
  const RefAttention& attn = ref.attention[k];
  return central_difference(
      [&](const Vec& probs) {
        const Vec y = ref_e_r1_row0_from_probs(w, k, e_in_row0, attn, h, probs);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += beta_k[i] * y[i];
        return s;
      },
      attn.probs_row0[h]);
}

/// R = A_K ... A_1 from the stored probabilities, by explicit triple loops.
inline Mat brute_force_rollout(const ForwardTrace<double>& tr) {
  const std::size_t n = tr.blocks[0].probs.dim(1), heads = tr.blocks[0].probs.dim(0);
  Mat r(n, Vec(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) r[i][i] = 1.0;
  for (const auto& b : tr.blocks) {
    Mat a(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        double m = 0;
        for (std::size_t h = 0; h < heads; ++h) m += b.probs(h, i, j);
        a[i][j] = 0.5 * m / static_cast<double>(heads) + (i == j ? 0.5 : 0.0);
        sum += a[i][j];
      }
      for (double& v : a[i]) v /= sum;
    }
    Mat next(n, Vec(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = 0; t < n; ++t) next[i][j] += a[i][t] * r[t][j];
    r = std::move(next);
  }
  return r;
}

}  // namespace vitcam::testing
