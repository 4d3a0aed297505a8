#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wp/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace wp;

PipelineConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return default_pipeline_config();
  std::vector<std::string> unknown;
  PipelineConfig cfg = load_pipeline_config(path, &unknown);
  for (const auto& key : unknown)
    std::cerr << "warning: " << path << ": unknown key '" << key << "'\n";
  return cfg;
}

std::vector<PathId> parse_paths(const std::string& spec) {
  if (spec.empty() || spec == "all") return {};
  std::vector<PathId> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "plain")
      out.push_back(PathId::Plain);
    else if (item == "spatial")
      out.push_back(PathId::Spatial);
    else if (item == "channel")
      out.push_back(PathId::Channel);
    else if (item == "pointwise")
      out.push_back(PathId::Pointwise);
    else
      throw CLI::ValidationError(
          "--paths", "unknown path '" + item +
                         "' (expected all or a comma list of plain,spatial,channel,pointwise)");
  }
  return out;
}

FusionMode parse_fusion(const std::string& name) {
  if (name == "max") return FusionMode::Max;
  if (name == "sum") return FusionMode::Sum;
  throw CLI::ValidationError("--fusion", "expected max or sum, got '" + name + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

// Label files must mirror the scene files one to one, matched by stem.
std::vector<std::vector<int>> load_label_dir(const std::string& dir,
                                             const std::vector<std::string>& scene_names,
                                             const std::vector<PointCloud>& scenes) {
  std::vector<std::vector<int>> labels;
  labels.reserve(scene_names.size());
  for (std::size_t i = 0; i < scene_names.size(); ++i) {
    const std::string stem = fs::path(scene_names[i]).stem().string();
    const std::string path = (fs::path(dir) / (stem + ".tsv")).string();
    if (!fs::exists(path)) throw DataError("no label file for scene '" + stem + "' in " + dir);
    const PointCloud labeled = load_cloud(path, CloudFormat::XyzRgbLTsv);
    if (!labeled.has_labels()) throw DataError(path + " carries no labels");
    if (labeled.size() != scenes[i].size())
      throw DataError(path + " has " + std::to_string(labeled.size()) + " points, scene has " +
                      std::to_string(scenes[i].size()));
    labels.push_back(labeled.labels);
  }
  return labels;
}

void print_metrics(const Metrics& m) {
  const auto iou = m.per_class_iou();
  for (std::size_t c = 0; c < iou.size(); ++c) {
    if (iou[c] < 0.0)
      std::cout << "class " << c << " iou -\n";
    else
      std::cout << "class " << c << " iou " << iou[c] << "\n";
  }
  std::cout << "miou " << m.miou() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"weakly supervised point-cloud segmentation from cloud-level labels"};
  app.require_subcommand(1);

  // gen-scenes
  auto* gen = app.add_subcommand("gen-scenes", "generate labeled synthetic room scenes");
  std::string gen_out;
  int gen_count = 8, gen_min_classes = 2, gen_max_classes = 6;
  std::uint64_t gen_seed = 1;
  double gen_size_scale = 1.0, gen_density_scale = 1.0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--min-classes", gen_min_classes, "fewest classes per scene");
  gen->add_option("--max-classes", gen_max_classes, "most classes per scene");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--size-scale", gen_size_scale, "room size multiplier");
  gen->add_option("--density-scale", gen_density_scale, "point density multiplier");
  gen->callback([&] {
    if (gen_min_classes < 2 || gen_max_classes > 8 || gen_min_classes > gen_max_classes)
      throw CLI::ValidationError("--min-classes/--max-classes",
                                 "need 2 <= min <= max <= 8");
    std::vector<PointCloud> scenes;
    scenes.reserve(gen_count);
    for (int i = 0; i < gen_count; ++i) {
      Rng recipe_rng(derive_seed(gen_seed, 0x9e9ULL + static_cast<std::uint64_t>(i)));
      const int classes = uniform_int(recipe_rng, gen_min_classes, gen_max_classes);
      const SceneRecipe recipe =
          random_room_recipe(classes, recipe_rng, gen_size_scale, gen_density_scale);
      scenes.push_back(
          generate_scene(recipe, derive_seed(gen_seed, 0x5ce9ULL + static_cast<std::uint64_t>(i))));
    }
    save_scene_dir(scenes, gen_out);
    std::cout << "wrote " << scenes.size() << " scenes to " << gen_out << "\n";
  });

  // weaklabel
  auto* weak = app.add_subcommand("weaklabel", "derive weak labels and subcloud statistics");
  std::string weak_scenes, weak_config, weak_out;
  weak->add_option("--scenes", weak_scenes, "scene directory")->required();
  weak->add_option("--config", weak_config, "config file");
  weak->add_option("--out", weak_out, "also write a JSON report here");
  weak->callback([&] {
    const PipelineConfig cfg = load_config_or_default(weak_config);
    std::vector<std::string> names;
    const std::vector<PointCloud> scenes = load_scene_dir(weak_scenes, &names);
    nlohmann::json report;
    report["scenes"] = nlohmann::json::array();
    std::vector<WeakLabel> scene_labels, subcloud_labels;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const WeakLabel label = scene_weak_label(scenes[i], cfg.model.num_classes);
      scene_labels.push_back(label);
      const SeedGrid grid = build_seed_grid(scenes[i], cfg.subcloud_radius);
      SubcloudStats stats;
      const auto samples =
          sample_subclouds(scenes[i], grid, cfg.model.num_classes, true, &stats);
      std::vector<int> present;
      for (std::size_t c = 0; c < label.size(); ++c)
        if (label[c]) present.push_back(static_cast<int>(c));
      std::cout << names[i] << " classes ";
      for (std::size_t k = 0; k < present.size(); ++k)
        std::cout << (k ? "," : "") << present[k];
      std::cout << " subclouds " << samples.size() << " empty_seeds " << stats.seeds_empty
                << "\n";
      for (const auto& s : samples) subcloud_labels.push_back(s.weak_label);
      nlohmann::json row;
      row["name"] = names[i];
      row["classes"] = present;
      row["subclouds"] = samples.size();
      row["empty_seeds"] = stats.seeds_empty;
      report["scenes"].push_back(std::move(row));
    }
    const auto scene_freq = class_frequencies(scene_labels);
    const auto sub_freq = class_frequencies(subcloud_labels);
    std::cout << "scene-level class frequencies:";
    for (double f : scene_freq) std::cout << " " << f;
    std::cout << "\nsubcloud-level class frequencies:";
    for (double f : sub_freq) std::cout << " " << f;
    std::cout << "\n";
    report["scene_frequencies"] = scene_freq;
    report["subcloud_frequencies"] = sub_freq;
    if (!weak_out.empty()) write_text_file(weak_out, report.dump(2) + "\n");
  });

  // train-cls
  auto* tcls = app.add_subcommand("train-cls", "train the four-path weak classifier");
  std::string tcls_scenes, tcls_config, tcls_out, tcls_level = "subcloud";
  tcls->add_option("--scenes", tcls_scenes, "scene directory")->required();
  tcls->add_option("--config", tcls_config, "config file");
  tcls->add_option("--out", tcls_out, "checkpoint path")->required();
  tcls->add_option("--level", tcls_level, "weak label level: subcloud or scene")
      ->check(CLI::IsMember({"subcloud", "scene"}));
  tcls->callback([&] {
    const PipelineConfig cfg = load_config_or_default(tcls_config);
    const std::vector<PointCloud> scenes = load_scene_dir(tcls_scenes, nullptr);
    const WeakLevel level = tcls_level == "scene" ? WeakLevel::Scene : WeakLevel::Subcloud;
    const TrainResult result = train_classifier(scenes, level, cfg, tcls_out, &std::cout);
    std::cout << "saved checkpoint " << tcls_out << " (digest " << result.digest << ")\n";
  });

  // pcam
  auto* pcam = app.add_subcommand("pcam", "generate pseudo labels from a trained classifier");
  std::string pcam_scenes, pcam_config, pcam_ckpt, pcam_out, pcam_paths = "all",
                                                            pcam_fusion = "max";
  bool pcam_crf = false;
  pcam->add_option("--scenes", pcam_scenes, "scene directory")->required();
  pcam->add_option("--config", pcam_config, "config file");
  pcam->add_option("--ckpt", pcam_ckpt, "classifier checkpoint")->required();
  pcam->add_option("--out", pcam_out, "output directory")->required();
  pcam->add_option("--paths", pcam_paths,
                   "all or comma list of plain,spatial,channel,pointwise");
  pcam->add_option("--fusion", pcam_fusion, "fusion mode: max or sum");
  pcam->add_flag("--crf", pcam_crf, "refine fused maps with the dense CRF");
  pcam->callback([&] {
    const PipelineConfig cfg = load_config_or_default(pcam_config);
    std::vector<std::string> names;
    const std::vector<PointCloud> scenes = load_scene_dir(pcam_scenes, &names);
    PseudoLabelOptions options;
    options.paths = parse_paths(pcam_paths);
    options.fusion = parse_fusion(pcam_fusion);
    options.use_crf = pcam_crf;
    const PseudoLabelResult result = generate_pseudo_labels(scenes, cfg, pcam_ckpt, options);
    write_pseudo_label_files(scenes, names, result, pcam_out);
    for (std::size_t i = 0; i < names.size(); ++i)
      std::cout << names[i] << " miou " << result.scenes[i].metrics.miou() << "\n";
    std::cout << "overall pseudo-label miou " << result.overall.miou() << "\n";
    std::cout << "wrote labels and metrics.json to " << pcam_out << "\n";
  });

  // refine
  auto* refine = app.add_subcommand("refine", "CRF-refine existing pseudo-label files");
  std::string ref_scenes, ref_labels, ref_config, ref_out;
  double ref_confidence = 4.0;
  refine->add_option("--scenes", ref_scenes, "scene directory (positions, colors, ground truth)")
      ->required();
  refine->add_option("--labels", ref_labels, "pseudo-label directory to refine")->required();
  refine->add_option("--config", ref_config, "config file");
  refine->add_option("--out", ref_out, "output directory")->required();
  refine->add_option("--confidence", ref_confidence,
                     "unary logit assigned to each hard label");
  refine->callback([&] {
    const PipelineConfig cfg = load_config_or_default(ref_config);
    std::vector<std::string> names;
    const std::vector<PointCloud> scenes = load_scene_dir(ref_scenes, &names);
    const auto labels = load_label_dir(ref_labels, names, scenes);
    const PseudoLabelResult result = refine_hard_labels(scenes, labels, cfg, ref_confidence);
    write_pseudo_label_files(scenes, names, result, ref_out);
    std::cout << "overall refined miou " << result.overall.miou() << "\n";
    std::cout << "wrote labels and metrics.json to " << ref_out << "\n";
  });

  // train-seg
  auto* tseg = app.add_subcommand("train-seg", "train the segmentation network on pseudo labels");
  std::string tseg_scenes, tseg_labels, tseg_config, tseg_out;
  tseg->add_option("--scenes", tseg_scenes, "scene directory")->required();
  tseg->add_option("--labels", tseg_labels, "pseudo-label directory")->required();
  tseg->add_option("--config", tseg_config, "config file");
  tseg->add_option("--out", tseg_out, "checkpoint path")->required();
  tseg->callback([&] {
    const PipelineConfig cfg = load_config_or_default(tseg_config);
    std::vector<std::string> names;
    const std::vector<PointCloud> scenes = load_scene_dir(tseg_scenes, &names);
    const auto labels = load_label_dir(tseg_labels, names, scenes);
    const TrainResult result = train_segmenter(scenes, labels, cfg, tseg_out, &std::cout);
    std::cout << "saved checkpoint " << tseg_out << " (digest " << result.digest << ")\n";
  });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a segmentation checkpoint");
  std::string ev_scenes, ev_config, ev_ckpt, ev_out;
  ev->add_option("--scenes", ev_scenes, "scene directory")->required();
  ev->add_option("--config", ev_config, "config file");
  ev->add_option("--ckpt", ev_ckpt, "segmenter checkpoint")->required();
  ev->add_option("--out", ev_out, "also write metrics JSON here");
  ev->callback([&] {
    const PipelineConfig cfg = load_config_or_default(ev_config);
    std::vector<std::string> names;
    const std::vector<PointCloud> scenes = load_scene_dir(ev_scenes, &names);
    const EvalResult result = evaluate_segmenter(scenes, cfg, ev_ckpt);
    print_metrics(result.overall);
    if (!ev_out.empty()) {
      std::vector<Metrics> per_scene;
      for (const auto& s : result.scenes) per_scene.push_back(s.metrics);
      write_text_file(ev_out, metrics_to_json(result.overall, per_scene, names));
    }
  });

  // ablate
  auto* ab = app.add_subcommand("ablate", "pseudo-label quality per path and fusion mode");
  std::string ab_scenes, ab_config, ab_ckpt, ab_out;
  bool ab_crf = false;
  ab->add_option("--scenes", ab_scenes, "scene directory")->required();
  ab->add_option("--config", ab_config, "config file");
  ab->add_option("--ckpt", ab_ckpt, "classifier checkpoint")->required();
  ab->add_option("--out", ab_out, "also write a JSON table here");
  ab->add_flag("--crf", ab_crf, "append a CRF-refined max-fusion row");
  ab->callback([&] {
    const PipelineConfig cfg = load_config_or_default(ab_config);
    const std::vector<PointCloud> scenes = load_scene_dir(ab_scenes, nullptr);
    const auto table = run_ablation(scenes, cfg, ab_ckpt, ab_crf);
    std::cout << "path            pseudo-mIoU\n";
    for (const auto& row : table) {
      char line[64];
      std::snprintf(line, sizeof line, "%-15s %.4f\n", row.name.c_str(), row.pseudo_miou);
      std::cout << line;
    }
    if (!ab_out.empty()) {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& row : table) j.push_back({{"name", row.name}, {"miou", row.pseudo_miou}});
      write_text_file(ab_out, j.dump(2) + "\n");
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const wp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const wp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
