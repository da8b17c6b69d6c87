#pragma once

// JSONL annotation ingestion. One object per line:
//   {"image": "rel/or/abs.jpg", "class": 3, "width": 500, "height": 375,
//    "boxes": [[xmin, ymin, xmax, ymax], ...]}
// Box coordinates are original-image pixels, inclusive-exclusive. Relative
// image paths resolve against the annotation file's directory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitcam/error.hpp"
#include "vitcam/postprocess.hpp"

namespace vitcam {

struct SourceBox {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

struct Sample {
  std::size_t index = 0;  // position among all annotation lines, skipped ones included
  std::size_t line = 0;   // 1-based line number
  std::filesystem::path image;
  std::size_t label = 0;
  std::size_t width = 0, height = 0;
  std::vector<SourceBox> boxes;
};

struct SkippedSample {
  std::size_t index = 0;
  std::size_t line = 0;
  std::filesystem::path image;
  std::string reason;
};

struct AnnotationSet {
  std::vector<Sample> samples;
  std::vector<SkippedSample> skipped;

  std::size_t total() const { return samples.size() + skipped.size(); }
};

struct AnnotationOptions {
  std::optional<std::size_t> num_classes;  // validates labels when set
  bool single_class = true;                // reject one image listed under two classes
  bool check_files = true;                 // skip lines whose image is missing
};

inline AnnotationSet load_annotations(const std::filesystem::path& path,
                                      const AnnotationOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  const std::filesystem::path base = path.parent_path();
  AnnotationSet set;
  std::map<std::string, std::size_t> class_of;
  std::string text;
  std::size_t line_no = 0, index = 0;
  auto fail = [&](const std::string& msg) {
    throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail("malformed JSON line");

    Sample s;
    s.index = index++;
    s.line = line_no;
    if (!j.contains("image") || !j["image"].is_string()) fail("missing string field \"image\"");
    if (!j.contains("class") || !j["class"].is_number_unsigned()) {
      fail("field \"class\" must be a non-negative integer");
    }
    for (const char* key : {"width", "height"}) {
      if (!j.contains(key) || !j[key].is_number_unsigned() || j[key].get<std::size_t>() == 0) {
        fail(std::string("field \"") + key + "\" must be a positive integer");
      }
    }
    std::filesystem::path img = j["image"].get<std::string>();
    s.image = img.is_absolute() ? img : base / img;
    s.label = j["class"].get<std::size_t>();
    s.width = j["width"].get<std::size_t>();
    s.height = j["height"].get<std::size_t>();
    if (opts.num_classes && s.label >= *opts.num_classes) {
      fail("class " + std::to_string(s.label) + " outside [0, " +
           std::to_string(*opts.num_classes) + ")");
    }
    if (!j.contains("boxes") || !j["boxes"].is_array() || j["boxes"].empty()) {
      fail("field \"boxes\" must be a non-empty array");
    }
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 4 ||
          !std::all_of(b.begin(), b.end(), [](const auto& v) { return v.is_number(); })) {
        fail("each box must be [xmin, ymin, xmax, ymax]");
      }
      SourceBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                    b[3].get<double>()};
      if (!(box.xmin < box.xmax) || !(box.ymin < box.ymax)) {
        fail("invalid box: requires xmin < xmax and ymin < ymax");
      }
      if (box.xmin < 0 || box.ymin < 0 || box.xmax > static_cast<double>(s.width) ||
          box.ymax > static_cast<double>(s.height)) {
        fail("invalid box: outside the " + std::to_string(s.width) + "x" +
             std::to_string(s.height) + " image");
      }
      s.boxes.push_back(box);
    }

    const std::string key = s.image.lexically_normal().string();
    if (opts.single_class) {
      auto [it, inserted] = class_of.emplace(key, s.label);
      if (!inserted && it->second != s.label) {
        fail("image " + key + " listed with classes " + std::to_string(it->second) + " and " +
             std::to_string(s.label));
      }
    }
    if (opts.check_files && !std::filesystem::exists(s.image)) {
      set.skipped.push_back({s.index, s.line, s.image, "image file not found"});
      continue;
    }
    set.samples.push_back(std::move(s));
  }
  return set;
}

/// Maps an original-resolution box into model space with per-axis scales,
/// rounding outward to whole pixels and clipping to [0, side).
inline Box map_box(const SourceBox& b, double scale_x, double scale_y, std::size_t side) {
  const int s = static_cast<int>(side);
  auto lo = [&](double v) { return std::clamp(static_cast<int>(std::floor(v + 1e-9)), 0, s); };
  auto hi = [&](double v) { return std::clamp(static_cast<int>(std::ceil(v - 1e-9)), 0, s); };
  Box out{lo(b.xmin * scale_x), lo(b.ymin * scale_y), hi(b.xmax * scale_x), hi(b.ymax * scale_y)};
  auto widen = [s](int& lo_edge, int& hi_edge) {
    if (hi_edge > lo_edge) return;
    if (lo_edge >= s) lo_edge = s - 1;
    hi_edge = lo_edge + 1;
  };
  widen(out.xmin, out.xmax);
  widen(out.ymin, out.ymax);
  return out;
}

}  // namespace vitcam
