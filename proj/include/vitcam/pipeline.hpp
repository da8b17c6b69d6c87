#pragma once

// End-to-end jobs behind the command-line tool: single-image explanation,
// localization evaluation and perturbation evaluation over an annotation set.
// Image jobs fan out over a worker pool; results are written in sample order,
// so output files do not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitcam/error.hpp"
#include "vitcam/evaluation.hpp"
#include "vitcam/explain.hpp"
#include "vitcam/image_io.hpp"
#include "vitcam/ingestion.hpp"
#include "vitcam/postprocess.hpp"
#include "vitcam/vit.hpp"
#include "vitcam/weights.hpp"

namespace vitcam {

inline constexpr const char* kWorkersEnv = "VITCAM_WORKERS";

struct RunConfig {
  std::filesystem::path checkpoint;
  Method method = Method::ours;
  double sigma = 0.5;
  std::size_t steps = 20;
  std::filesystem::path out_dir = ".";
  bool exclude_misclassified = true;
  std::size_t workers = 0;  // 0: VITCAM_WORKERS, else hardware concurrency

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (!(sigma >= 0.0 && sigma <= 1.0)) out.emplace_back("sigma must lie in [0, 1]");
    if (steps < 1) out.emplace_back("steps must be >= 1");
    return out;
  }
};

inline std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on `workers` threads; rethrows the first failure.
template <typename F>
void parallel_for(std::size_t count, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// explain

struct ExplainOutput {
  std::size_t predicted = 0;
  std::size_t class_index = 0;
  Heatmap heatmap;
  std::filesystem::path png, raw;
};

/// Explains one image for `class_index` (the predicted class when unset) and
/// writes <stem>_<method>_c<class>.png plus a .raw sidecar into out_dir.
inline ExplainOutput run_explain(const ViTWeights<float>& w, const std::filesystem::path& image,
                                 std::optional<std::size_t> class_index, Method method,
                                 const std::filesystem::path& out_dir) {
  const PreparedImage prep =
      prepare_image(image, w.image_mean, w.image_std, w.config.image_side);
  const ForwardResult<float> fwd = forward(prep.pixels, w);
  ExplainOutput out;
  out.predicted = fwd.trace.predicted_class();
  out.class_index = class_index.value_or(out.predicted);
  if (out.class_index >= w.config.num_classes) {
    throw ValidationError("class " + std::to_string(out.class_index) + " outside [0, " +
                          std::to_string(w.config.num_classes) + ")");
  }
  const Cam<float> cam = explain(fwd.trace, w, out.class_index, method);
  out.heatmap = to_heatmap(cam, w.config.image_side);
  std::filesystem::create_directories(out_dir);
  const std::string stem = image.stem().string() + "_" + std::string(method_name(method)) +
                           "_c" + std::to_string(out.class_index);
  out.png = out_dir / (stem + ".png");
  out.raw = out_dir / (stem + ".raw");
  write_heatmap_png(out.png, out.heatmap);
  write_raw_heatmap(out.raw, out.heatmap.values);
  return out;
}

// ---------------------------------------------------------------------------
// localization

enum class SampleStatus { row, excluded, skipped };

struct LocRow {
  SampleStatus status = SampleStatus::skipped;
  std::size_t index = 0;
  std::string image;
  std::size_t label = 0, predicted = 0;
  std::vector<Box> pred_boxes, gt_boxes;
  LocMetrics metrics;
  std::string reason;
};

struct LocSummary {
  std::size_t samples_in = 0, rows = 0, excluded = 0, skipped = 0;
  LocMetrics mean;
  std::vector<LocRow> results;  // one per annotation line, in sample order
  std::filesystem::path csv, json;
};

/// Localization for one prepared image; `label` is the ground-truth class.
inline LocRow localize(const ViTWeights<float>& w, const PreparedImage& prep, const Sample& s,
                       const RunConfig& cfg) {
  LocRow row;
  row.index = s.index;
  row.image = s.image.string();
  row.label = s.label;
  const ForwardResult<float> fwd = forward(prep.pixels, w);
  row.predicted = fwd.trace.predicted_class();
  if (cfg.exclude_misclassified && row.predicted != row.label) {
    row.status = SampleStatus::excluded;
    row.reason = "misclassified";
    return row;
  }
  const std::size_t side = w.config.image_side;
  const Cam<float> cam = explain(fwd.trace, w, row.label, cfg.method);
  const Heatmap hm = to_heatmap(cam, side);
  row.pred_boxes = extract_boxes(binarize(hm, cfg.sigma));
  for (const SourceBox& b : s.boxes) row.gt_boxes.push_back(map_box(b, prep.scale_x, prep.scale_y, side));
  row.metrics = localization_metrics(row.pred_boxes, row.gt_boxes, side);
  row.status = SampleStatus::row;
  return row;
}

inline LocSummary evaluate_localization(const ViTWeights<float>& w, const AnnotationSet& set,
                                        const RunConfig& cfg) {
  LocSummary sum;
  sum.samples_in = set.total();
  std::vector<LocRow> rows(set.samples.size());
  parallel_for(set.samples.size(), resolve_workers(cfg.workers), [&](std::size_t i) {
    const Sample& s = set.samples[i];
    try {
      const PreparedImage prep =
          prepare_image(s.image, w.image_mean, w.image_std, w.config.image_side);
      rows[i] = localize(w, prep, s, cfg);
    } catch (const IoError& e) {
      rows[i].index = s.index;
      rows[i].image = s.image.string();
      rows[i].label = s.label;
      rows[i].status = SampleStatus::skipped;
      rows[i].reason = e.what();
    }
  });
  for (const SkippedSample& sk : set.skipped) {
    LocRow r;
    r.index = sk.index;
    r.image = sk.image.string();
    r.status = SampleStatus::skipped;
    r.reason = sk.reason;
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(),
            [](const LocRow& a, const LocRow& b) { return a.index < b.index; });
  for (const LocRow& r : rows) {
    switch (r.status) {
      case SampleStatus::row:
        ++sum.rows;
        sum.mean.pixel_accuracy += r.metrics.pixel_accuracy;
        sum.mean.iou += r.metrics.iou;
        sum.mean.dice += r.metrics.dice;
        sum.mean.precision += r.metrics.precision;
        sum.mean.recall += r.metrics.recall;
        break;
      case SampleStatus::excluded:
        ++sum.excluded;
        break;
      case SampleStatus::skipped:
        ++sum.skipped;
        break;
    }
  }
  if (sum.rows) {
    const double n = static_cast<double>(sum.rows);
    sum.mean.pixel_accuracy /= n;
    sum.mean.iou /= n;
    sum.mean.dice /= n;
    sum.mean.precision /= n;
    sum.mean.recall /= n;
  }
  sum.results = std::move(rows);
  return sum;
}

inline void write_localization(LocSummary& sum, const RunConfig& cfg) {
  using detail::fmt_real;
  std::filesystem::create_directories(cfg.out_dir);
  const std::string tag(method_name(cfg.method));
  std::ostringstream csv;
  csv << "index,image,class,predicted,pixel_accuracy,iou,dice,precision,recall,num_boxes\n";
  nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const LocRow& r : sum.results) {
    if (r.status == SampleStatus::row) {
      csv << r.index << ',' << detail::csv_field(r.image) << ',' << r.label << ','
          << r.predicted << ',' << fmt_real(r.metrics.pixel_accuracy) << ','
          << fmt_real(r.metrics.iou) << ',' << fmt_real(r.metrics.dice) << ','
          << fmt_real(r.metrics.precision) << ',' << fmt_real(r.metrics.recall) << ','
          << r.pred_boxes.size() << '\n';
    } else if (r.status == SampleStatus::excluded) {
      excluded.push_back({{"index", r.index}, {"image", r.image}, {"class", r.label},
                          {"predicted", r.predicted}});
    } else {
      skipped.push_back({{"index", r.index}, {"image", r.image}, {"reason", r.reason}});
    }
  }
  const auto mean = [&](double v) {
    return sum.rows ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["method"] = tag;
  j["sigma"] = cfg.sigma;
  j["samples_in"] = sum.samples_in;
  j["rows"] = sum.rows;
  j["excluded"] = sum.excluded;
  j["skipped"] = sum.skipped;
  j["mean"] = {{"pixel_accuracy", mean(sum.mean.pixel_accuracy)},
               {"iou", mean(sum.mean.iou)},
               {"dice", mean(sum.mean.dice)},
               {"precision", mean(sum.mean.precision)},
               {"recall", mean(sum.mean.recall)}};
  j["excluded_samples"] = excluded;
  j["skipped_samples"] = skipped;
  sum.csv = cfg.out_dir / ("loc_" + tag + ".csv");
  sum.json = cfg.out_dir / ("loc_" + tag + "_summary.json");
  detail::write_text(sum.csv, csv.str());
  detail::write_text(sum.json, j.dump(2) + "\n");
}

inline LocSummary run_eval_loc(const ViTWeights<float>& w, const AnnotationSet& set,
                               const RunConfig& cfg) {
  LocSummary sum = evaluate_localization(w, set, cfg);
  write_localization(sum, cfg);
  return sum;
}

// ---------------------------------------------------------------------------
// perturbation

struct PerturbRow {
  SampleStatus status = SampleStatus::skipped;
  std::size_t index = 0;
  std::string image;
  std::size_t label = 0, predicted = 0;
  PerturbationCurve lerf, morf;
  double auc_lerf = 0, auc_morf = 0, abpc = 0;
  std::string reason;
};

struct PerturbSummary {
  std::size_t samples_in = 0, rows = 0, excluded = 0, skipped = 0;
  double mean_auc_lerf = 0, mean_auc_morf = 0, mean_abpc = 0;
  std::vector<PerturbRow> results;
  std::filesystem::path csv, curves_csv, json;
};

/// LeRF/MoRF curves of the ground-truth class's heatmap for one prepared image.
inline PerturbRow perturb(const ViTWeights<float>& w, const PreparedImage& prep, const Sample& s,
                          const RunConfig& cfg) {
  PerturbRow row;
  row.index = s.index;
  row.image = s.image.string();
  row.label = s.label;
  const ForwardResult<float> fwd = forward(prep.pixels, w);
  row.predicted = fwd.trace.predicted_class();
  if (cfg.exclude_misclassified && row.predicted != row.label) {
    row.status = SampleStatus::excluded;
    row.reason = "misclassified";
    return row;
  }
  const Heatmap hm = to_heatmap(explain(fwd.trace, w, s.label, cfg.method), w.config.image_side);
  row.lerf = perturbation_curve(prep.pixels, w, hm, s.label, PerturbOrder::lerf, cfg.steps);
  row.morf = perturbation_curve(prep.pixels, w, hm, s.label, PerturbOrder::morf, cfg.steps);
  row.auc_lerf = trapezoid_auc(row.lerf);
  row.auc_morf = trapezoid_auc(row.morf);
  row.abpc = abpc_score(row.lerf, row.morf);
  row.status = SampleStatus::row;
  return row;
}

inline PerturbSummary evaluate_perturbation(const ViTWeights<float>& w, const AnnotationSet& set,
                                            const RunConfig& cfg) {
  PerturbSummary sum;
  sum.samples_in = set.total();
  std::vector<PerturbRow> rows(set.samples.size());
  parallel_for(set.samples.size(), resolve_workers(cfg.workers), [&](std::size_t i) {
    const Sample& s = set.samples[i];
    try {
      const PreparedImage prep =
          prepare_image(s.image, w.image_mean, w.image_std, w.config.image_side);
      rows[i] = perturb(w, prep, s, cfg);
    } catch (const IoError& e) {
      rows[i].index = s.index;
      rows[i].image = s.image.string();
      rows[i].label = s.label;
      rows[i].status = SampleStatus::skipped;
      rows[i].reason = e.what();
    }
  });
  for (const SkippedSample& sk : set.skipped) {
    PerturbRow r;
    r.index = sk.index;
    r.image = sk.image.string();
    r.reason = sk.reason;
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end(),
            [](const PerturbRow& a, const PerturbRow& b) { return a.index < b.index; });
  for (const PerturbRow& r : rows) {
    if (r.status == SampleStatus::row) {
      ++sum.rows;
      sum.mean_auc_lerf += r.auc_lerf;
      sum.mean_auc_morf += r.auc_morf;
      sum.mean_abpc += r.abpc;
    } else if (r.status == SampleStatus::excluded) {
      ++sum.excluded;
    } else {
      ++sum.skipped;
    }
  }
  if (sum.rows) {
    const double n = static_cast<double>(sum.rows);
    sum.mean_auc_lerf /= n;
    sum.mean_auc_morf /= n;
    sum.mean_abpc /= n;
  }
  sum.results = std::move(rows);
  return sum;
}

inline void write_perturbation(PerturbSummary& sum, const RunConfig& cfg) {
  using detail::fmt_real;
  std::filesystem::create_directories(cfg.out_dir);
  const std::string tag(method_name(cfg.method));
  std::ostringstream csv, curves;
  csv << "index,image,class,predicted,prob_original,auc_lerf,auc_morf,abpc\n";
  curves << "index,order,step,fraction,probability\n";
  nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const PerturbRow& r : sum.results) {
    if (r.status == SampleStatus::row) {
      csv << r.index << ',' << detail::csv_field(r.image) << ',' << r.label << ','
          << r.predicted << ',' << fmt_real(r.lerf.probabilities.front()) << ','
          << fmt_real(r.auc_lerf) << ',' << fmt_real(r.auc_morf) << ',' << fmt_real(r.abpc)
          << '\n';
      for (const PerturbationCurve* c : {&r.lerf, &r.morf}) {
        for (std::size_t i = 0; i < c->fractions.size(); ++i) {
          curves << r.index << ',' << order_name(c->order) << ',' << i << ','
                 << fmt_real(c->fractions[i]) << ',' << fmt_real(c->probabilities[i]) << '\n';
        }
      }
    } else if (r.status == SampleStatus::excluded) {
      excluded.push_back({{"index", r.index}, {"image", r.image}, {"class", r.label},
                          {"predicted", r.predicted}});
    } else {
      skipped.push_back({{"index", r.index}, {"image", r.image}, {"reason", r.reason}});
    }
  }
  const auto mean = [&](double v) {
    return sum.rows ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["method"] = tag;
  j["steps"] = cfg.steps;
  j["samples_in"] = sum.samples_in;
  j["rows"] = sum.rows;
  j["excluded"] = sum.excluded;
  j["skipped"] = sum.skipped;
  j["mean"] = {{"auc_lerf", mean(sum.mean_auc_lerf)},
               {"auc_morf", mean(sum.mean_auc_morf)},
               {"abpc", mean(sum.mean_abpc)}};
  j["excluded_samples"] = excluded;
  j["skipped_samples"] = skipped;
  sum.csv = cfg.out_dir / ("perturb_" + tag + ".csv");
  sum.curves_csv = cfg.out_dir / ("perturb_" + tag + "_curves.csv");
  sum.json = cfg.out_dir / ("perturb_" + tag + "_summary.json");
  detail::write_text(sum.csv, csv.str());
  detail::write_text(sum.curves_csv, curves.str());
  detail::write_text(sum.json, j.dump(2) + "\n");
}

inline PerturbSummary run_eval_perturb(const ViTWeights<float>& w, const AnnotationSet& set,
                                       const RunConfig& cfg) {
  PerturbSummary sum = evaluate_perturbation(w, set, cfg);
  write_perturbation(sum, cfg);
  return sum;
}

}  // namespace vitcam
