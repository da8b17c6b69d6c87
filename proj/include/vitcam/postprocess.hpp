#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include "vitcam/error.hpp"
#include "vitcam/explain.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/tensor.hpp"

namespace vitcam {

/// Min-max normalized map at image resolution; all zeros when the source map was constant.
struct Heatmap {
  Tensor<float> values;  // [side x side]
  Method method = Method::ours;
  std::size_t class_index = 0;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// Axis-aligned pixel box, inclusive-exclusive: [xmin, xmax) x [ymin, ymax).
struct Box {
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  int area() const { return (xmax - xmin) * (ymax - ymin); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Mask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
};

/// Corner-aligned bilinear upsampling of the CAM grid, then min-max normalization.
template <typename T>
Heatmap to_heatmap(const Cam<T>& cam, std::size_t side = 224) {
  Tensor<float> up = bilinear_resize(cam.grid.template cast<float>(), side, side);
  const auto [lo, hi] = std::minmax_element(up.data().begin(), up.data().end());
  const float mn = *lo, mx = *hi;
  if (mx > mn) {
    const float range = mx - mn;
    for (float& v : up.data()) v = (v - mn) / range;
  } else {
    std::fill(up.data().begin(), up.data().end(), 0.0f);
  }
  return Heatmap{std::move(up), cam.method, cam.class_index};
}

/// mask[p] = heatmap[p] > sigma.
inline Mask binarize(const Heatmap& hm, double sigma = 0.5) {
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw DomainError("binarize: sigma must lie in [0, 1]");
  Mask m(hm.height(), hm.width());
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    m.bits[i] = static_cast<double>(hm.values[i]) > sigma ? 1 : 0;
  return m;
}

/// Tight boxes of 8-connected components, ordered by (ymin, xmin).
inline std::vector<Box> extract_boxes(const Mask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<Box> boxes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.bits[start] || seen[start]) continue;
    Box b{static_cast<int>(start % w), static_cast<int>(start / w),
          static_cast<int>(start % w) + 1, static_cast<int>(start / w) + 1};
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const int cy = static_cast<int>(cur / w), cx = static_cast<int>(cur % w);
      b.xmin = std::min(b.xmin, cx);
      b.ymin = std::min(b.ymin, cy);
      b.xmax = std::max(b.xmax, cx + 1);
      b.ymax = std::max(b.ymax, cy + 1);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = cy + dy, nx = cx + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || nx < 0 || ny >= static_cast<int>(h) ||
              nx >= static_cast<int>(w))
            continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask.bits[ni] && !seen[ni]) {
            seen[ni] = 1;
            stack.push_back(ni);
          }
        }
      }
    }
    boxes.push_back(b);
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) {
    return std::tie(a.ymin, a.xmin) < std::tie(b.ymin, b.xmin);
  });
  return boxes;
}

// ---------------------------------------------------------------------------
// raw sidecar: u32 height, u32 width (little-endian), then height*width f32 values.

inline void write_raw_heatmap(const std::filesystem::path& path, const Tensor<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto h = static_cast<std::uint32_t>(values.dim(0));
  const auto w = static_cast<std::uint32_t>(values.dim(1));
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(values.data().data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Tensor<float> read_raw_heatmap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in) throw IoError(path.string() + ": truncated raw heatmap header");
  Tensor<float> t({h, w});
  in.read(reinterpret_cast<char*>(t.data().data()),
          static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) throw IoError(path.string() + ": truncated raw heatmap payload");
  return t;
}

}  // namespace vitcam
