// vitcam: explain, eval-loc and eval-perturb over an exported ViT checkpoint.
//
// Exit status: 0 on success, 1 on invalid input (validation, format,
// dimension, domain or numeric errors), 2 on I/O failures.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vitcam/checkpoint.hpp"
#include "vitcam/error.hpp"
#include "vitcam/ingestion.hpp"
#include "vitcam/pipeline.hpp"

namespace {

vitcam::Method method_from(const std::string& s) {
  const auto m = vitcam::parse_method(s);
  if (!m) throw vitcam::ValidationError("unknown method " + s);
  return *m;
}

vitcam::AnnotationSet load_set(const std::string& path, const vitcam::ViTWeights<float>& w) {
  vitcam::AnnotationOptions opts;
  opts.num_classes = w.config.num_classes;
  vitcam::AnnotationSet set = vitcam::load_annotations(path, opts);
  for (const auto& sk : set.skipped)
    std::cerr << "skip: line " << sk.line << ": " << sk.image.string() << ": " << sk.reason << "\n";
  return set;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided class activation maps for Vision Transformers"};
  app.require_subcommand(1);

  std::string checkpoint, image, annotations, method = "ours", out = ".";
  std::optional<std::size_t> class_index;
  double sigma = 0.5;
  std::size_t steps = 20;
  bool keep_misclassified = false;

  const auto methods = CLI::IsMember({"ours", "raw_attention", "rollout"});

  auto* explain = app.add_subcommand("explain", "Write the heatmap of one image");
  explain->add_option("--checkpoint", checkpoint, "Exported checkpoint")->required();
  explain->add_option("--image", image, "Input image")->required();
  explain->add_option("--class", class_index, "Target class (default: predicted)");
  explain->add_option("--method", method, "Saliency method")->check(methods)->capture_default_str();
  explain->add_option("--out", out, "Output directory")->capture_default_str();

  auto* loc = app.add_subcommand("eval-loc", "Box localization metrics over an annotation set");
  loc->add_option("--checkpoint", checkpoint, "Exported checkpoint")->required();
  loc->add_option("--annotations", annotations, "JSONL annotation file")->required();
  loc->add_option("--method", method, "Saliency method")->check(methods)->capture_default_str();
  loc->add_option("--sigma", sigma, "Heatmap threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  loc->add_option("--out", out, "Output directory")->capture_default_str();
  loc->add_flag("--keep-misclassified", keep_misclassified, "Evaluate misclassified images too");

  auto* pert = app.add_subcommand("eval-perturb", "LeRF/MoRF perturbation curves and ABPC");
  pert->add_option("--checkpoint", checkpoint, "Exported checkpoint")->required();
  pert->add_option("--annotations", annotations, "JSONL annotation file")->required();
  pert->add_option("--method", method, "Saliency method")->check(methods)->capture_default_str();
  pert->add_option("--steps", steps, "Perturbation steps")->capture_default_str()->check(CLI::PositiveNumber);
  pert->add_option("--out", out, "Output directory")->capture_default_str();
  pert->add_flag("--keep-misclassified", keep_misclassified, "Evaluate misclassified images too");

  CLI11_PARSE(app, argc, argv);

  try {
    const vitcam::ViTWeights<float> w = vitcam::load_checkpoint(checkpoint);
    vitcam::RunConfig cfg;
    cfg.checkpoint = checkpoint;
    cfg.method = method_from(method);
    cfg.sigma = sigma;
    cfg.steps = steps;
    cfg.out_dir = out;
    cfg.exclude_misclassified = !keep_misclassified;

    if (*explain) {
      const auto res = vitcam::run_explain(w, image, class_index, cfg.method, cfg.out_dir);
      std::cout << "predicted " << res.predicted << " explained " << res.class_index << "\n"
                << res.png.string() << "\n"
                << res.raw.string() << "\n";
    } else if (*loc) {
      const auto set = load_set(annotations, w);
      const auto sum = vitcam::run_eval_loc(w, set, cfg);
      std::cout << "samples " << sum.samples_in << " rows " << sum.rows << " excluded "
                << sum.excluded << " skipped " << sum.skipped << "\n";
      if (sum.rows) std::printf("mean iou %.6f dice %.6f\n", sum.mean.iou, sum.mean.dice);
      std::cout << sum.csv.string() << "\n" << sum.json.string() << "\n";
    } else {
      const auto set = load_set(annotations, w);
      const auto sum = vitcam::run_eval_perturb(w, set, cfg);
      std::cout << "samples " << sum.samples_in << " rows " << sum.rows << " excluded "
                << sum.excluded << " skipped " << sum.skipped << "\n";
      if (sum.rows) std::printf("mean abpc %.6f\n", sum.mean_abpc);
      std::cout << sum.csv.string() << "\n" << sum.json.string() << "\n";
    }
  } catch (const vitcam::IoError& e) {
    std::cerr << "vitcam: " << e.what() << "\n";
    return 2;
  } catch (const vitcam::Error& e) {
    std::cerr << "vitcam: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
