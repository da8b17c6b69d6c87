#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string_view>
#include <vector>

#include "vitcam/error.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/postprocess.hpp"
#include "vitcam/tensor.hpp"
#include "vitcam/vit.hpp"

namespace vitcam {

struct LocMetrics {
  double pixel_accuracy = 0.0;
  double iou = 0.0;
  double dice = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Union of boxes painted into a side x side mask (boxes are clipped to the image).
inline Mask rasterize(const std::vector<Box>& boxes, std::size_t side) {
  Mask m(side, side);
  const int s = static_cast<int>(side);
  for (const Box& b : boxes) {
    const int x0 = std::clamp(b.xmin, 0, s), x1 = std::clamp(b.xmax, 0, s);
    const int y0 = std::clamp(b.ymin, 0, s), y1 = std::clamp(b.ymax, 0, s);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  }
  return m;
}

/// Pixel metrics between two masks. Conventions for empty sets: both empty
/// scores 1 everywhere; otherwise a ratio with an empty denominator scores 0.
inline LocMetrics mask_metrics(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("mask_metrics: mask sizes differ");
  }
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    np += pred.bits[i];
    ng += gt.bits[i];
    tp += pred.bits[i] & gt.bits[i];
  }
  const std::size_t total = pred.bits.size();
  const std::size_t uni = np + ng - tp;
  const std::size_t tn = total - uni;
  LocMetrics m;
  m.pixel_accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  if (np == 0 && ng == 0) {
    m.iou = m.dice = m.precision = m.recall = 1.0;
    return m;
  }
  m.iou = static_cast<double>(tp) / static_cast<double>(uni);
  m.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(np + ng);
  m.precision = np ? static_cast<double>(tp) / static_cast<double>(np) : 0.0;
  m.recall = ng ? static_cast<double>(tp) / static_cast<double>(ng) : 0.0;
  return m;
}

inline LocMetrics localization_metrics(const std::vector<Box>& pred_boxes,
                                       const std::vector<Box>& gt_boxes,
                                       std::size_t side = 224) {
  return mask_metrics(rasterize(pred_boxes, side), rasterize(gt_boxes, side));
}

// ---------------------------------------------------------------------------
// perturbation

enum class PerturbOrder { lerf, morf };

inline std::string_view order_name(PerturbOrder o) {
  return o == PerturbOrder::lerf ? "lerf" : "morf";
}

struct PerturbationCurve {
  std::vector<double> fractions;
  std::vector<double> probabilities;
  PerturbOrder order = PerturbOrder::lerf;
};

/// Pixel indices in removal order: ascending heatmap value for LeRF,
/// descending for MoRF; ties in both cases by increasing row-major index.
inline std::vector<std::size_t> removal_order(const Heatmap& hm, PerturbOrder order) {
  std::vector<std::size_t> idx(hm.values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto& v = hm.values;
  if (order == PerturbOrder::lerf) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  } else {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  }
  return idx;
}

/// Number of pixels removed at step i of `steps` out of `total`.
inline std::size_t removed_count(std::size_t i, std::size_t steps, std::size_t total) {
  return i * total / steps;
}

/**
 * Cumulatively replaces ranked pixels (all channels) with zero, the dataset
 * mean in normalized space, and records the softmax probability of class c
 * after each of `steps` equal increments. The heatmap must match the image
 * resolution.
 */
template <typename T>
PerturbationCurve perturbation_curve(const Tensor<T>& image, const ViTWeights<T>& w,
                                     const Heatmap& hm, std::size_t c, PerturbOrder order,
                                     std::size_t steps = 20) {
  if (steps < 1) throw DomainError("perturbation_curve: steps must be >= 1");
  if (image.rank() != 3 || hm.height() != image.dim(0) || hm.width() != image.dim(1)) {
    throw DimensionError("perturbation_curve: heatmap " + shape_string(hm.values.shape()) +
                         " does not match image " + shape_string(image.shape()));
  }
  const std::size_t total = hm.values.size(), ch = image.dim(2);
  const std::vector<std::size_t> ranked = removal_order(hm, order);
  PerturbationCurve curve;
  curve.order = order;
  Tensor<T> work = image;
  std::size_t removed = 0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const std::size_t target = removed_count(i, steps, total);
    for (; removed < target; ++removed) {
      const std::size_t px = ranked[removed];
      for (std::size_t k = 0; k < ch; ++k) work[px * ch + k] = T{0};
    }
    curve.fractions.push_back(static_cast<double>(i) / static_cast<double>(steps));
    curve.probabilities.push_back(static_cast<double>(class_probability(work, w, c)));
  }
  return curve;
}

inline double trapezoid_auc(const PerturbationCurve& c) {
  double area = 0.0;
  for (std::size_t i = 1; i < c.fractions.size(); ++i) {
    area += 0.5 * (c.fractions[i] - c.fractions[i - 1]) *
            (c.probabilities[i] + c.probabilities[i - 1]);
  }
  return area;
}

/// Area between the curves: AUC(LeRF) - AUC(MoRF).
inline double abpc_score(const PerturbationCurve& lerf, const PerturbationCurve& morf) {
  if (lerf.fractions != morf.fractions || lerf.probabilities.size() != lerf.fractions.size() ||
      morf.probabilities.size() != morf.fractions.size()) {
    throw DomainError("abpc_score: curves are sampled on different fraction grids");
  }
  return trapezoid_auc(lerf) - trapezoid_auc(morf);
}

}  // namespace vitcam
