#pragma once

// Image decode/encode through OpenCV imgcodecs. Everything numeric (resize,
// normalization) goes through the library's own kernels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vitcam/error.hpp"
#include "vitcam/kernels.hpp"
#include "vitcam/postprocess.hpp"
#include "vitcam/tensor.hpp"

namespace vitcam {

struct PreparedImage {
  Tensor<float> pixels;  // [side x side x 3], normalized
  std::size_t width = 0, height = 0;  // original dimensions
  double scale_x = 1.0, scale_y = 1.0;  // original -> model coordinates
};

/// Interleaved 8-bit RGB buffer -> direct bilinear resize to side x side,
/// then (x / 255 - mean) / std per channel.
inline PreparedImage prepare_rgb(std::span<const std::uint8_t> rgb, std::size_t width,
                                 std::size_t height, const std::array<double, 3>& mean,
                                 const std::array<double, 3>& stdev, std::size_t side = 224) {
  if (width == 0 || height == 0 || rgb.size() != width * height * 3) {
    throw DimensionError("prepare_rgb: buffer does not hold a " + std::to_string(width) + "x" +
                         std::to_string(height) + " RGB image");
  }
  PreparedImage out;
  out.width = width;
  out.height = height;
  out.scale_x = static_cast<double>(side) / static_cast<double>(width);
  out.scale_y = static_cast<double>(side) / static_cast<double>(height);
  out.pixels = Tensor<float>({side, side, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor<float> plane({height, width});
    for (std::size_t i = 0; i < width * height; ++i) plane[i] = rgb[i * 3 + c];
    const Tensor<float> resized = bilinear_resize(plane, side, side);
    const float m = static_cast<float>(mean[c]), s = static_cast<float>(stdev[c]);
    for (std::size_t i = 0; i < side * side; ++i)
      out.pixels[i * 3 + c] = (resized[i] / 255.0f - m) / s;
  }
  return out;
}

inline PreparedImage prepare_image(const std::filesystem::path& path,
                                   const std::array<double, 3>& mean,
                                   const std::array<double, 3>& stdev, std::size_t side = 224) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  if (!bgr.isContinuous()) bgr = bgr.clone();
  const auto w = static_cast<std::size_t>(bgr.cols), h = static_cast<std::size_t>(bgr.rows);
  std::vector<std::uint8_t> rgb(w * h * 3);
  const std::uint8_t* src = bgr.ptr<std::uint8_t>(0);
  for (std::size_t i = 0; i < w * h; ++i) {
    rgb[i * 3 + 0] = src[i * 3 + 2];
    rgb[i * 3 + 1] = src[i * 3 + 1];
    rgb[i * 3 + 2] = src[i * 3 + 0];
  }
  return prepare_rgb(rgb, w, h, mean, stdev, side);
}

/// Writes an interleaved RGB buffer as an image file (format from the extension).
inline void write_rgb_image(const std::filesystem::path& path, std::span<const std::uint8_t> rgb,
                            std::size_t width, std::size_t height) {
  cv::Mat bgr(static_cast<int>(height), static_cast<int>(width), CV_8UC3);
  std::uint8_t* dst = bgr.ptr<std::uint8_t>(0);
  for (std::size_t i = 0; i < width * height; ++i) {
    dst[i * 3 + 0] = rgb[i * 3 + 2];
    dst[i * 3 + 1] = rgb[i * 3 + 1];
    dst[i * 3 + 2] = rgb[i * 3 + 0];
  }
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

/// 8-bit grayscale PNG of a [0, 1] heatmap (value * 255, rounded).
inline void write_heatmap_png(const std::filesystem::path& path, const Heatmap& hm) {
  cv::Mat gray(static_cast<int>(hm.height()), static_cast<int>(hm.width()), CV_8UC1);
  for (std::size_t i = 0; i < hm.values.size(); ++i) {
    const float v = std::clamp(hm.values[i], 0.0f, 1.0f);
    gray.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  if (!cv::imwrite(path.string(), gray)) throw IoError("cannot write heatmap " + path.string());
}

}  // namespace vitcam
