#pragma once

// Dense numeric primitives shared by the forward pass, the explainers and the
// postprocessing stage. Every kernel is a pure function of its inputs and
// reduces in a fixed left-to-right order, so identical inputs give
// bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vitcam/error.hpp"
#include "vitcam/tensor.hpp"

namespace vitcam {

namespace detail {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

template <typename T>
void require_finite(std::span<const T> xs, const char* what) {
  for (const T& v : xs) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite input");
  }
}

}  // namespace detail

/// a[m x k] * b[k x n]. Each output element accumulates over k in increasing order.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shape mismatch " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), kk = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();

  // Four output rows share each streamed row of b. The per-element order of
  // accumulation is still k = 0, 1, ..., kk-1.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* o0 = po + (i + 0) * n;
    T* o1 = po + (i + 1) * n;
    T* o2 = po + (i + 2) * n;
    T* o3 = po + (i + 3) * n;
    for (std::size_t k = 0; k < kk; ++k) {
      const T a0 = pa[(i + 0) * kk + k];
      const T a1 = pa[(i + 1) * kk + k];
      const T a2 = pa[(i + 2) * kk + k];
      const T a3 = pa[(i + 3) * kk + k];
      const T* br = pb + k * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = br[j];
        o0[j] += a0 * bv;
        o1[j] += a1 * bv;
        o2[j] += a2 * bv;
        o3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* o = po + i * n;
    for (std::size_t k = 0; k < kk; ++k) {
      const T av = pa[i * kk + k];
      const T* br = pb + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

/// Fully connected layer in out x in weight layout: x * w^T + bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(weight, 2, "linear weight");
  if (bias.size() != weight.dim(0)) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) +
                         " does not match weight " + shape_string(weight.shape()));
  }
  if (x.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " does not match weight " + shape_string(weight.shape()));
  }
  Tensor<T> out = matmul(x, transpose(weight));
  const std::size_t n = out.dim(1);
  for (std::size_t i = 0; i < out.dim(0); ++i) {
    T* o = out.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += bias[j];
  }
  return out;
}

/// y = w * x + bias for a single vector x (weight in out x in layout).
template <typename T>
std::vector<T> matvec(const Tensor<T>& weight, std::span<const T> x,
                      const Tensor<T>* bias = nullptr) {
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  if (x.size() != cols) throw DimensionError("matvec: input length mismatch");
  std::vector<T> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* w = weight.data().data() + r * cols;
    T acc = bias ? (*bias)[r] : T{0};
    for (std::size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
  return y;
}

/// g * w for a single row vector g (weight in out x in layout): the VJP of matvec.
template <typename T>
std::vector<T> vecmat(std::span<const T> g, const Tensor<T>& weight) {
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  if (g.size() != rows) throw DimensionError("vecmat: gradient length mismatch");
  std::vector<T> out(cols, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    const T gr = g[r];
    const T* w = weight.data().data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += gr * w[c];
  }
  return out;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// ---------------------------------------------------------------------------
// softmax / sigmoid

template <typename T>
void softmax_inplace(std::span<T> x) {
  if (x.empty()) throw DomainError("softmax: empty row");
  detail::require_finite<T>(x, "softmax");
  const T mx = *std::max_element(x.begin(), x.end());
  T sum{0};
  for (T& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : x) v /= sum;
}

template <typename T>
Tensor<T> softmax_row(const Tensor<T>& x) {
  if (x.rank() != 1) throw DimensionError("softmax_row: expected rank 1, got " +
                                          shape_string(x.shape()));
  Tensor<T> out = x;
  softmax_inplace<T>(out.data());
  return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> x) {
  std::vector<T> out(x.begin(), x.end());
  softmax_inplace<T>(std::span<T>(out));
  return out;
}

/// Row-wise softmax of a matrix of logits.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out = x;
  const std::size_t rows = x.shape().at(0);
  for (std::size_t i = 0; i < rows; ++i) softmax_inplace<T>(out.row(i));
  return out;
}

/// Full Jacobian dS_i/dv_j = S_i (delta_ij - S_j) of softmax at the probabilities s.
template <typename T>
Tensor<T> softmax_jacobian(std::span<const T> s) {
  const std::size_t n = s.size();
  Tensor<T> jac({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      jac(i, j) = (i == j) ? s[i] * (T{1} - s[i]) : -s[i] * s[j];
  return jac;
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
Tensor<T> sigmoid_map(const Tensor<T>& x) {
  detail::require_finite<T>(x.data(), "sigmoid");
  Tensor<T> out = x;
  for (T& v : out.data()) v = sigmoid(v);
  return out;
}

template <typename T>
std::vector<T> sigmoid_map(std::span<const T> x) {
  detail::require_finite<T>(x, "sigmoid");
  std::vector<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](T v) { return sigmoid(v); });
  return out;
}

// ---------------------------------------------------------------------------
// layer norm

template <typename T>
struct LayerNormStats {
  std::vector<T> mean;
  std::vector<T> rstd;  // 1 / sqrt(var + eps)
};

namespace detail {

template <typename T>
void layer_norm_row(std::span<const T> x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps, std::span<T> y, T& mean_out, T& rstd_out) {
  const std::size_t p = x.size();
  T mean{0};
  for (const T& v : x) mean += v;
  mean /= static_cast<T>(p);
  T var{0};
  for (const T& v : x) var += (v - mean) * (v - mean);
  var /= static_cast<T>(p);
  const T rstd = T{1} / std::sqrt(var + eps);
  for (std::size_t j = 0; j < p; ++j) y[j] = (x[j] - mean) * rstd * gamma[j] + beta[j];
  mean_out = mean;
  rstd_out = rstd;
}

}  // namespace detail

/// Per-row normalization to zero mean and unit (population) variance, then
/// the affine map gamma * xhat + beta. Row i of the output depends on row i only.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps, LayerNormStats<T>* stats = nullptr) {
  if (!(eps > T{0})) throw DomainError("layer_norm: eps must be positive");
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), p = x.dim(1);
  if (gamma.size() != p || beta.size() != p) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) +
                         " vs gamma " + shape_string(gamma.shape()) + " / beta " +
                         shape_string(beta.shape()));
  }
  Tensor<T> out({n, p});
  std::vector<T> means(n), rstds(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::layer_norm_row<T>(x.row(i), gamma, beta, eps, out.row(i), means[i], rstds[i]);
  }
  if (stats) {
    stats->mean = std::move(means);
    stats->rstd = std::move(rstds);
  }
  return out;
}

/// Single-row layer norm returning the normalized row.
template <typename T>
std::vector<T> layer_norm_vector(std::span<const T> x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, T eps, T* mean = nullptr,
                                 T* rstd = nullptr) {
  if (gamma.size() != x.size() || beta.size() != x.size()) {
    throw DimensionError("layer_norm: width mismatch");
  }
  std::vector<T> y(x.size());
  T m{}, r{};
  detail::layer_norm_row<T>(x, gamma, beta, eps, std::span<T>(y), m, r);
  if (mean) *mean = m;
  if (rstd) *rstd = r;
  return y;
}

/// VJP of one layer-norm row: given dL/dy, returns dL/dx.
template <typename T>
std::vector<T> layer_norm_vjp(std::span<const T> grad_out, std::span<const T> x,
                              const Tensor<T>& gamma, T mean, T rstd) {
  const std::size_t p = x.size();
  std::vector<T> xhat(p), gxhat(p);
  T mean_g{0}, mean_gx{0};
  for (std::size_t j = 0; j < p; ++j) {
    xhat[j] = (x[j] - mean) * rstd;
    gxhat[j] = grad_out[j] * gamma[j];
    mean_g += gxhat[j];
    mean_gx += gxhat[j] * xhat[j];
  }
  mean_g /= static_cast<T>(p);
  mean_gx /= static_cast<T>(p);
  std::vector<T> dx(p);
  for (std::size_t j = 0; j < p; ++j) dx[j] = rstd * (gxhat[j] - mean_g - xhat[j] * mean_gx);
  return dx;
}

// ---------------------------------------------------------------------------
// GELU (exact erf form)

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T{-0.5} * x * x) * std::numbers::inv_sqrtpi_v<T> /
                std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (T& v : out.data()) v = gelu(v);
  return out;
}

// ---------------------------------------------------------------------------
// resize

/**
 * Corner-aligned bilinear resize of an h x w map: output pixel (i, j) samples
 * the source at (i * (h-1)/(out_h-1), j * (w-1)/(out_w-1)). Corners land on
 * corners, equal sizes reproduce the input, and a constant map stays constant
 * bit-for-bit.
 */
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& map, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(map, 2, "bilinear_resize");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (h == 0 || w == 0) throw DomainError("bilinear_resize: empty input map");
  if (out_h == 0 || out_w == 0) throw DomainError("bilinear_resize: zero-sized output");

  auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
    if (out == 1 || in == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in - 1) /
           static_cast<double>(out - 1);
  };

  Tensor<T> out({out_h, out_w});
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = coord(i, h, out_h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const T dy = static_cast<T>(sy - static_cast<double>(y0));
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = coord(j, w, out_w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const T dx = static_cast<T>(sx - static_cast<double>(x0));
      const T a = map(y0, x0), b = map(y0, x1), c = map(y1, x0), d = map(y1, x1);
      const T top = a + dx * (b - a);
      const T bottom = c + dx * (d - c);
      out(i, j) = top + dy * (bottom - top);
    }
  }
  return out;
}

}  // namespace vitcam
