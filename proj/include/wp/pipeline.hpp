#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wp/crf.hpp"
#include "wp/mprm.hpp"
#include "wp/weaksup.hpp"

namespace wp {

// --- synthetic scenes -------------------------------------------------------

// Surface primitive sampled at `density` points per square meter. Floors span
// extent.x by extent.y at z = origin.z; walls are vertical rectangles whose
// zero x or y extent picks the normal axis; boxes sample all six faces of the
// cuboid [origin, origin+extent] with area-weighted face choice.
struct ScenePrimitive {
  enum class Kind { Floor, Wall, Box };
  Kind kind = Kind::Floor;
  int class_id = 0;
  Vec3 origin{0, 0, 0};
  Vec3 extent{1, 1, 0};
  Vec3 base_color{0.5, 0.5, 0.5};
  double color_jitter = 0.05;
  double density = 100.0;
  double noise_sigma = 0.0;
};

struct SceneRecipe {
  std::vector<ScenePrimitive> primitives;
  int num_classes = 0;
};

PointCloud generate_scene(const SceneRecipe& recipe, std::uint64_t seed);

// Floor (class 0), four border walls (class 1), and one box per remaining
// class. The floor covers the whole footprint, so its scene-level frequency
// is 1 while its subcloud-level frequency is not.
SceneRecipe random_room_recipe(int num_classes, Rng& rng, double size_scale = 1.0,
                               double density_scale = 1.0);

// --- batching ---------------------------------------------------------------

struct Batch {
  std::vector<int> stream_indices;  // positions in the input stream, order kept
  std::vector<int> lengths;
  std::vector<int> offsets;  // row offset of each subcloud in the stacked cloud
  std::vector<WeakLabel> weak_labels;
  int total_points = 0;
};

// Greedy fill: close the open batch when the next sample would push it past
// `limit`. A single sample larger than the limit travels alone, never dropped.
std::vector<Batch> stack_batches_by_size(const std::vector<int>& sizes, int limit);
std::vector<Batch> stack_batches(const std::vector<SubcloudSample>& stream, int limit);

// --- optimizer --------------------------------------------------------------

// initial_lr * 10^(-epoch/100): one decade lost every 100 epochs.
double learning_rate(double initial_lr, int epoch);

class SgdMomentum {
 public:
  explicit SgdMomentum(std::vector<NamedParam> params, double momentum = 0.98);

  void zero_grad();
  // v <- momentum*v - lr*grad; theta <- theta + v. Missing grads count as 0.
  void step(double lr);
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

// --- metrics ----------------------------------------------------------------

struct Metrics {
  std::vector<std::int64_t> intersection;
  std::vector<std::int64_t> union_count;

  int num_classes() const { return static_cast<int>(intersection.size()); }
  // -1 marks a class absent from both prediction and ground truth.
  std::vector<double> per_class_iou() const;
  // Mean over classes with nonzero union; 0 when every class is absent.
  double miou() const;
  void accumulate(const Metrics& other);
};

// Ground-truth -1 rows are skipped entirely.
Metrics evaluate_labels(const std::vector<int>& predicted, const std::vector<int>& ground_truth,
                        int num_classes);

// --- configuration ----------------------------------------------------------

struct TrainConfig {
  double momentum = 0.98;
  double initial_lr = 0.01;
  int epochs = 100;
  int batch_point_limit = 6000;
  std::uint64_t seed = 1;
  // Stop once the epoch-mean loss drops below ratio * epoch-0 loss; 0 = off.
  double stop_loss_ratio = 0.0;
};

struct PipelineConfig {
  MprmConfig model;
  bool black_indicator = false;
  double subcloud_radius = 2.0;
  int random_subclouds_per_scene = 8;
  TrainConfig cls_train;
  TrainConfig seg_train;
  CrfConfig crf;
  std::uint64_t master_seed = 1;
};

PipelineConfig default_pipeline_config();
// key=value lines, '#' comments; unknown keys reported via `unknown` when given.
PipelineConfig load_pipeline_config(const std::string& path,
                                    std::vector<std::string>* unknown = nullptr);

class KeyValueFile {
 public:
  static KeyValueFile parse_file(const std::string& path);
  static KeyValueFile parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  // Keys present in the file but never queried; catches typos.
  std::vector<std::string> unused_keys() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

// --- subcloud preparation ---------------------------------------------------

struct PreparedSubcloud {
  SubcloudSample sample;
  PointCloud cloud;  // member slice of the scene
  CloudPyramid pyramid;
  Tensor features;
};

PointCloud slice_cloud(const PointCloud& scene, const std::vector<int>& indices);

std::vector<PreparedSubcloud> prepare_grid_subclouds(const PointCloud& scene,
                                                     const PipelineConfig& config);
std::vector<PreparedSubcloud> prepare_random_subclouds(const PointCloud& scene,
                                                       const PipelineConfig& config, Rng& rng);

// --- pipeline stages --------------------------------------------------------

enum class WeakLevel { Subcloud, Scene };

struct TrainLogEntry {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::uint64_t digest = 0;
};

// Trains the four-path classifier on weak labels and saves a checkpoint.
// Scene mode samples `random_subclouds_per_scene` seeded subclouds carrying
// the scene label; subcloud mode walks the seed grid with per-subcloud labels.
TrainResult train_classifier(const std::vector<PointCloud>& scenes, WeakLevel level,
                             const PipelineConfig& config, const std::string& checkpoint_path,
                             std::ostream* log_stream = nullptr);

struct PseudoLabelOptions {
  std::vector<PathId> paths;  // empty = all four
  FusionMode fusion = FusionMode::Max;
  bool use_crf = false;
};

struct ScenePseudoLabels {
  std::vector<int> labels;
  std::vector<double> scores;
  Metrics metrics;  // vs ground truth
};

struct PseudoLabelResult {
  std::vector<ScenePseudoLabels> scenes;
  Metrics overall;
};

PseudoLabelResult generate_pseudo_labels(const std::vector<PointCloud>& scenes,
                                         const PipelineConfig& config,
                                         const std::string& checkpoint_path,
                                         const PseudoLabelOptions& options);

// Standalone refinement of hard labels: unary scores are one-hot at
// `confidence`, the positive set is the classes present in each scene's
// labels, and over-budget scenes fall back to per-subcloud refinement.
PseudoLabelResult refine_hard_labels(const std::vector<PointCloud>& scenes,
                                     const std::vector<std::vector<int>>& labels,
                                     const PipelineConfig& config, double confidence);

// Per-point cross entropy against the provided labels (-1 rows ignored).
TrainResult train_segmenter(const std::vector<PointCloud>& scenes,
                            const std::vector<std::vector<int>>& labels,
                            const PipelineConfig& config, const std::string& checkpoint_path,
                            std::ostream* log_stream = nullptr);

struct SceneEval {
  std::vector<int> predictions;
  Metrics metrics;
};

struct EvalResult {
  std::vector<SceneEval> scenes;
  Metrics overall;
};

EvalResult evaluate_segmenter(const std::vector<PointCloud>& scenes, const PipelineConfig& config,
                              const std::string& checkpoint_path);

std::uint64_t segmenter_digest(const PipelineConfig& config);

// --- ablations --------------------------------------------------------------

struct AblationRow {
  std::string name;
  double pseudo_miou = 0.0;
};

// Pseudo-label quality per path plus both fusion modes; with_crf appends a
// refined max-fusion row.
std::vector<AblationRow> run_ablation(const std::vector<PointCloud>& scenes,
                                      const PipelineConfig& config,
                                      const std::string& checkpoint_path, bool with_crf);

// --- scene and label files --------------------------------------------------

std::vector<std::string> list_scene_files(const std::string& dir);  // sorted basenames
std::vector<PointCloud> load_scene_dir(const std::string& dir, std::vector<std::string>* names);
void save_scene_dir(const std::vector<PointCloud>& scenes, const std::string& dir);

// One TSV per scene (positions and colors copied, labels replaced) plus a
// metrics.json sidecar; byte-stable for fixed inputs.
void write_pseudo_label_files(const std::vector<PointCloud>& scenes,
                              const std::vector<std::string>& names,
                              const PseudoLabelResult& result, const std::string& out_dir);
std::string metrics_to_json(const PseudoLabelResult& result, const std::vector<std::string>& names);
std::string metrics_to_json(const Metrics& overall, const std::vector<Metrics>& per_scene,
                            const std::vector<std::string>& names);

}  // namespace wp
