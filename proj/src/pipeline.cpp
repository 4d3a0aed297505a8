#include "wp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace wp {

namespace {

namespace fs = std::filesystem;

void fisher_yates(std::vector<int>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng() % i]);
}

Tensor detach(const Tensor& t) {
  auto v = t.values();
  return Tensor::from_values(t.shape(), std::vector<double>(v.begin(), v.end()));
}

void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.model.num_classes < 1) throw DataError("config: num_classes must be at least 1");
  if (cfg.model.input_dim != 4) throw DataError("config: input_dim must be 4 (r, g, b, 1)");
  if (cfg.model.plan.widths.empty()) throw DataError("config: widths list is empty");
  for (int w : cfg.model.plan.widths)
    if (w < 1) throw DataError("config: widths must be positive");
  if (cfg.model.plan.base_cell <= 0.0) throw DataError("config: base_cell must be positive");
  if (cfg.model.plan.radius_factor <= 0.0)
    throw DataError("config: radius_factor must be positive");
  if (cfg.model.plan.kernel_points < 1) throw DataError("config: kernel_points must be positive");
  if (cfg.model.plan.sigma_ratio <= 0.0) throw DataError("config: sigma_ratio must be positive");
  if (cfg.model.plan.neighbor_cap < 0) throw DataError("config: neighbor_cap must be nonnegative");
  if (cfg.model.attention_reduce < 1) throw DataError("config: attention_reduce must be positive");
  if (cfg.model.dropout_rate < 0.0 || cfg.model.dropout_rate >= 1.0)
    throw DataError("config: dropout must lie in [0, 1)");
  if (cfg.subcloud_radius <= 0.0) throw DataError("config: subcloud_radius must be positive");
  if (cfg.random_subclouds_per_scene < 1)
    throw DataError("config: random_subclouds must be positive");
  for (const TrainConfig* t : {&cfg.cls_train, &cfg.seg_train}) {
    if (t->epochs < 1) throw DataError("config: epochs must be at least 1");
    if (t->batch_point_limit < 1) throw DataError("config: batch_point_limit must be positive");
    if (t->initial_lr <= 0.0) throw DataError("config: learning rate must be positive");
    if (t->momentum < 0.0 || t->momentum >= 1.0)
      throw DataError("config: momentum must lie in [0, 1)");
    if (t->stop_loss_ratio < 0.0 || t->stop_loss_ratio >= 1.0)
      throw DataError("config: stop_loss_ratio must lie in [0, 1)");
  }
  cfg.crf.validate();
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

// --- batching ---------------------------------------------------------------

std::vector<Batch> stack_batches_by_size(const std::vector<int>& sizes, int limit) {
  if (limit < 1) throw DataError("batch point limit must be positive");
  std::vector<Batch> batches;
  Batch open;
  auto flush = [&] {
    if (!open.stream_indices.empty()) {
      batches.push_back(std::move(open));
      open = Batch{};
    }
  };
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw DataError("batch stacking: nonpositive sample size");
    if (!open.stream_indices.empty() && open.total_points + sizes[i] > limit) flush();
    open.stream_indices.push_back(static_cast<int>(i));
    open.offsets.push_back(open.total_points);
    open.lengths.push_back(sizes[i]);
    open.total_points += sizes[i];
  }
  flush();
  return batches;
}

std::vector<Batch> stack_batches(const std::vector<SubcloudSample>& stream, int limit) {
  std::vector<int> sizes;
  sizes.reserve(stream.size());
  for (const auto& s : stream) sizes.push_back(static_cast<int>(s.member_indices.size()));
  std::vector<Batch> batches = stack_batches_by_size(sizes, limit);
  for (auto& b : batches)
    for (int idx : b.stream_indices) b.weak_labels.push_back(stream[idx].weak_label);
  return batches;
}

// --- optimizer --------------------------------------------------------------

double learning_rate(double initial_lr, int epoch) {
  return initial_lr * std::pow(10.0, -epoch / 100.0);
}

SgdMomentum::SgdMomentum(std::vector<NamedParam> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_)
    velocity_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void SgdMomentum::step(double lr) {
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto values = params_[pi].tensor.values_mut();
    auto grad = params_[pi].tensor.grad();
    auto& v = velocity_[pi];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      v[i] = momentum_ * v[i] - lr * g;
      values[i] += v[i];
    }
  }
}

// --- metrics ----------------------------------------------------------------

std::vector<double> Metrics::per_class_iou() const {
  std::vector<double> out(intersection.size(), -1.0);
  for (std::size_t c = 0; c < intersection.size(); ++c)
    if (union_count[c] > 0)
      out[c] = static_cast<double>(intersection[c]) / static_cast<double>(union_count[c]);
  return out;
}

double Metrics::miou() const {
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < intersection.size(); ++c) {
    if (union_count[c] == 0) continue;
    sum += static_cast<double>(intersection[c]) / static_cast<double>(union_count[c]);
    ++present;
  }
  return present == 0 ? 0.0 : sum / present;
}

void Metrics::accumulate(const Metrics& other) {
  if (intersection.empty()) {
    *this = other;
    return;
  }
  if (other.intersection.size() != intersection.size())
    throw DataError("metrics accumulate: class count mismatch");
  for (std::size_t c = 0; c < intersection.size(); ++c) {
    intersection[c] += other.intersection[c];
    union_count[c] += other.union_count[c];
  }
}

Metrics evaluate_labels(const std::vector<int>& predicted, const std::vector<int>& ground_truth,
                        int num_classes) {
  if (predicted.size() != ground_truth.size())
    throw DataError("metrics: prediction and ground truth sizes differ");
  if (num_classes < 1) throw DataError("metrics: num_classes must be positive");
  Metrics m;
  m.intersection.assign(num_classes, 0);
  m.union_count.assign(num_classes, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int t = ground_truth[i];
    if (t < 0) continue;  // unclassified points carry no evaluation signal
    const int p = predicted[i];
    if (t >= num_classes) throw DataError("metrics: ground-truth class out of range");
    if (p < 0 || p >= num_classes) throw DataError("metrics: predicted class out of range");
    if (p == t) {
      m.intersection[t] += 1;
      m.union_count[t] += 1;
    } else {
      m.union_count[t] += 1;
      m.union_count[p] += 1;
    }
  }
  return m;
}

// --- configuration ----------------------------------------------------------

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw DataError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!kv.values_.emplace(key, value).second)
      throw DataError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return kv;
}

bool KeyValueFile::has(const std::string& key) const {
  touched_.insert(key);
  return values_.count(key) != 0;
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError(origin_ + ": key '" + key + "' has non-numeric value '" + it->second + "'");
  }
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    if (v < INT32_MIN || v > INT32_MAX) throw std::out_of_range("int range");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw DataError(origin_ + ": key '" + key + "' has non-integer value '" + it->second + "'");
  }
}

std::uint64_t KeyValueFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError(origin_ + ": key '" + key + "' has non-integer value '" + it->second + "'");
  }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataError(origin_ + ": key '" + key + "' wants true/false, got '" + it->second + "'");
}

std::vector<int> KeyValueFile::get_int_list(const std::string& key,
                                            std::vector<int> fallback) const {
  touched_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(origin_ + ": key '" + key + "' has non-integer entry '" + item + "'");
    }
  }
  if (out.empty()) throw DataError(origin_ + ": key '" + key + "' lists no values");
  return out;
}

std::vector<std::string> KeyValueFile::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (!touched_.count(key)) out.push_back(key);
  return out;
}

PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  cfg.model.plan.widths = {16, 24, 32};
  cfg.model.num_classes = 6;
  cfg.master_seed = 1;
  cfg.model.init_seed = derive_seed(cfg.master_seed, 0x1417ULL);
  cfg.cls_train.epochs = 100;
  cfg.cls_train.seed = derive_seed(cfg.master_seed, 0xc15ULL);
  cfg.seg_train.epochs = 50;
  cfg.seg_train.seed = derive_seed(cfg.master_seed, 0x5e6ULL);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path, std::vector<std::string>* unknown) {
  PipelineConfig cfg = default_pipeline_config();
  const KeyValueFile kv = KeyValueFile::parse_file(path);

  LayerPlan& plan = cfg.model.plan;
  plan.base_cell = kv.get_double("base_cell", plan.base_cell);
  plan.radius_factor = kv.get_double("radius_factor", plan.radius_factor);
  plan.kernel_points = kv.get_int("kernel_points", plan.kernel_points);
  plan.sigma_ratio = kv.get_double("sigma_ratio", plan.sigma_ratio);
  plan.neighbor_cap = kv.get_int("neighbor_cap", plan.neighbor_cap);
  plan.widths = kv.get_int_list("widths", plan.widths);

  cfg.model.num_classes = kv.get_int("num_classes", cfg.model.num_classes);
  cfg.model.input_dim = kv.get_int("input_dim", cfg.model.input_dim);
  cfg.model.attention_reduce = kv.get_int("attention_reduce", cfg.model.attention_reduce);
  cfg.model.dropout_rate = kv.get_double("dropout", cfg.model.dropout_rate);
  cfg.black_indicator = kv.get_bool("black_indicator", cfg.black_indicator);

  cfg.subcloud_radius = kv.get_double("subcloud_radius", cfg.subcloud_radius);
  cfg.random_subclouds_per_scene =
      kv.get_int("random_subclouds", cfg.random_subclouds_per_scene);

  const double momentum = kv.get_double("momentum", cfg.cls_train.momentum);
  const int batch_limit = kv.get_int("batch_point_limit", cfg.cls_train.batch_point_limit);
  cfg.cls_train.momentum = momentum;
  cfg.seg_train.momentum = momentum;
  cfg.cls_train.batch_point_limit = batch_limit;
  cfg.seg_train.batch_point_limit = batch_limit;
  cfg.cls_train.epochs = kv.get_int("cls_epochs", cfg.cls_train.epochs);
  cfg.cls_train.initial_lr = kv.get_double("cls_lr", cfg.cls_train.initial_lr);
  cfg.cls_train.stop_loss_ratio =
      kv.get_double("cls_stop_loss_ratio", cfg.cls_train.stop_loss_ratio);
  cfg.seg_train.epochs = kv.get_int("seg_epochs", cfg.seg_train.epochs);
  cfg.seg_train.initial_lr = kv.get_double("seg_lr", cfg.seg_train.initial_lr);
  cfg.seg_train.stop_loss_ratio =
      kv.get_double("seg_stop_loss_ratio", cfg.seg_train.stop_loss_ratio);

  cfg.crf.bilateral_weight = kv.get_double("crf_bilateral_weight", cfg.crf.bilateral_weight);
  cfg.crf.position_bandwidth = kv.get_double("crf_position_bandwidth", cfg.crf.position_bandwidth);
  cfg.crf.color_bandwidth = kv.get_double("crf_color_bandwidth", cfg.crf.color_bandwidth);
  cfg.crf.smooth_weight = kv.get_double("crf_smooth_weight", cfg.crf.smooth_weight);
  cfg.crf.smooth_bandwidth = kv.get_double("crf_smooth_bandwidth", cfg.crf.smooth_bandwidth);
  cfg.crf.iterations = kv.get_int("crf_iterations", cfg.crf.iterations);
  cfg.crf.max_points = kv.get_int("crf_max_points", cfg.crf.max_points);

  cfg.master_seed = kv.get_u64("seed", cfg.master_seed);
  cfg.model.init_seed = derive_seed(cfg.master_seed, 0x1417ULL);
  cfg.cls_train.seed = derive_seed(cfg.master_seed, 0xc15ULL);
  cfg.seg_train.seed = derive_seed(cfg.master_seed, 0x5e6ULL);

  if (unknown) *unknown = kv.unused_keys();
  validate_pipeline_config(cfg);
  return cfg;
}

// --- subcloud preparation ---------------------------------------------------

PointCloud slice_cloud(const PointCloud& scene, const std::vector<int>& indices) {
  PointCloud out;
  out.positions.reserve(indices.size());
  out.colors.reserve(indices.size());
  if (scene.has_labels()) out.labels.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= scene.size()) throw DataError("slice: point index out of range");
    out.positions.push_back(scene.positions[idx]);
    out.colors.push_back(scene.colors[idx]);
    if (scene.has_labels()) out.labels.push_back(scene.labels[idx]);
  }
  return out;
}

namespace {

PreparedSubcloud prepare_one(const PointCloud& scene, SubcloudSample sample,
                             const PipelineConfig& config) {
  PreparedSubcloud prep;
  prep.cloud = slice_cloud(scene, sample.member_indices);
  prep.sample = std::move(sample);
  prep.pyramid = build_pyramid(prep.cloud.positions, config.model.plan);
  prep.features = input_features(prep.cloud, config.black_indicator);
  return prep;
}

}  // namespace

std::vector<PreparedSubcloud> prepare_grid_subclouds(const PointCloud& scene,
                                                     const PipelineConfig& config) {
  const SeedGrid grid = build_seed_grid(scene, config.subcloud_radius);
  std::vector<SubcloudSample> samples =
      sample_subclouds(scene, grid, config.model.num_classes, true);
  std::vector<PreparedSubcloud> out;
  out.reserve(samples.size());
  for (auto& s : samples) out.push_back(prepare_one(scene, std::move(s), config));
  return out;
}

std::vector<PreparedSubcloud> prepare_random_subclouds(const PointCloud& scene,
                                                       const PipelineConfig& config, Rng& rng) {
  const WeakLabel scene_label = scene_weak_label(scene, config.model.num_classes);
  std::vector<SubcloudSample> samples =
      sample_random_subclouds(scene, config.subcloud_radius, config.random_subclouds_per_scene,
                              config.model.num_classes, scene_label, rng);
  std::vector<PreparedSubcloud> out;
  out.reserve(samples.size());
  for (auto& s : samples) out.push_back(prepare_one(scene, std::move(s), config));
  return out;
}

// --- classifier training ----------------------------------------------------

namespace {

void log_epoch(std::ostream* stream, const TrainLogEntry& entry) {
  if (!stream) return;
  char buf[96];
  std::snprintf(buf, sizeof buf, "epoch %d loss %.6f lr %.6f\n", entry.epoch, entry.loss,
                entry.lr);
  *stream << buf << std::flush;
}

}  // namespace

TrainResult train_classifier(const std::vector<PointCloud>& scenes, WeakLevel level,
                             const PipelineConfig& config, const std::string& checkpoint_path,
                             std::ostream* log_stream) {
  validate_pipeline_config(config);
  if (scenes.empty()) throw DataError("classifier training: no scenes");
  for (std::size_t s = 0; s < scenes.size(); ++s)
    if (!scenes[s].has_labels())
      throw DataError("classifier training: scene " + std::to_string(s) + " carries no labels");

  std::vector<PreparedSubcloud> samples;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    std::vector<PreparedSubcloud> per_scene;
    if (level == WeakLevel::Subcloud) {
      per_scene = prepare_grid_subclouds(scenes[s], config);
    } else {
      Rng rng(derive_seed(config.cls_train.seed, 0x5ce0e00ULL + s));
      per_scene = prepare_random_subclouds(scenes[s], config, rng);
    }
    for (auto& p : per_scene) samples.push_back(std::move(p));
  }
  if (samples.empty()) throw DataError("classifier training: no nonempty subclouds");

  MprmModel model(config.model);
  const TrainConfig& tc = config.cls_train;
  SgdMomentum opt(model.params(), tc.momentum);

  TrainResult result;
  result.digest = model.digest();
  double epoch0_loss = 0.0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(tc.seed, 0xe90c4ULL + static_cast<std::uint64_t>(epoch)));
    fisher_yates(order, shuffle_rng);

    std::vector<int> sizes;
    sizes.reserve(order.size());
    for (int idx : order)
      sizes.push_back(static_cast<int>(samples[idx].sample.member_indices.size()));
    const std::vector<Batch> batches = stack_batches_by_size(sizes, tc.batch_point_limit);

    const double lr = learning_rate(tc.initial_lr, epoch);
    double loss_sum = 0.0;
    for (const Batch& batch : batches) {
      Tensor batch_loss;
      for (int pos : batch.stream_indices) {
        const PreparedSubcloud& sub = samples[order[pos]];
        const std::uint64_t drop_seed =
            derive_seed(tc.seed, 0xd0ULL * 1000003ULL * (epoch + 1) +
                                     static_cast<std::uint64_t>(order[pos]));
        const auto logits =
            model.forward_logits(sub.pyramid, sub.features, true, drop_seed);
        const Tensor term = model.training_loss(logits, sub.sample.weak_label);
        batch_loss = batch_loss.defined() ? add(batch_loss, term) : term;
      }
      batch_loss = scale(batch_loss, 1.0 / batch.stream_indices.size());
      const double value = batch_loss.scalar_value();
      if (!std::isfinite(value))
        throw NumericError("classifier training diverged at epoch " + std::to_string(epoch) +
                           " (batch loss is not finite)");
      opt.zero_grad();
      batch_loss.backward();
      opt.step(lr);
      loss_sum += value;
    }
    const TrainLogEntry entry{epoch, loss_sum / batches.size(), lr};
    result.log.push_back(entry);
    log_epoch(log_stream, entry);
    if (epoch == 0) epoch0_loss = entry.loss;
    if (tc.stop_loss_ratio > 0.0 && epoch > 0 && entry.loss < tc.stop_loss_ratio * epoch0_loss)
      break;
  }

  save_checkpoint(checkpoint_path, model.digest(), model.params());
  return result;
}

// --- pseudo-label generation ------------------------------------------------

namespace {

std::vector<PathId> resolve_paths(const std::vector<PathId>& requested) {
  if (requested.empty())
    return {PathId::Plain, PathId::Spatial, PathId::Channel, PathId::Pointwise};
  std::vector<PathId> out;
  for (PathId p : requested) {
    if (p == PathId::Fused) throw DataError("pseudo labels: 'fused' is not a selectable path");
    if (std::find(out.begin(), out.end(), p) != out.end())
      throw DataError(std::string("pseudo labels: duplicate path '") + path_name(p) + "'");
    out.push_back(p);
  }
  return out;
}

// Fused coarse map upsampled to the subcloud's own points, tape-free.
Tensor subcloud_point_scores(const MprmModel& model, const PreparedSubcloud& sub,
                             const std::vector<PathId>& paths, FusionMode fusion) {
  const std::vector<ScoreMap> pcams =
      model.compute_pcams(sub.pyramid, sub.features, sub.sample.weak_label);
  std::vector<ScoreMap> selected;
  selected.reserve(paths.size());
  for (PathId p : paths) selected.push_back(pcams[static_cast<int>(p)]);
  ScoreMap fused = selected.size() == 1 ? selected.front() : fuse_pcams(selected, fusion);
  const Tensor coarse = detach(fused.scores);
  return upsample_nearest(coarse, sub.cloud.positions, sub.pyramid.levels.back().points);
}

Tensor marginal_tensor(const MarginalField& field) {
  return Tensor::from_values({field.rows(), field.num_classes},
                             std::vector<double>(field.q.begin(), field.q.end()));
}

}  // namespace

PseudoLabelResult generate_pseudo_labels(const std::vector<PointCloud>& scenes,
                                         const PipelineConfig& config,
                                         const std::string& checkpoint_path,
                                         const PseudoLabelOptions& options) {
  validate_pipeline_config(config);
  if (scenes.empty()) throw DataError("pseudo labels: no scenes");
  const std::vector<PathId> paths = resolve_paths(options.paths);

  MprmModel model(config.model);
  std::vector<NamedParam> params = model.params();
  load_checkpoint(checkpoint_path, model.digest(), params);

  PseudoLabelResult result;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const PointCloud& scene = scenes[s];
    if (!scene.has_labels())
      throw DataError("pseudo labels: scene " + std::to_string(s) + " carries no labels");
    const std::vector<PreparedSubcloud> subs = prepare_grid_subclouds(scene, config);
    if (subs.empty()) throw DataError("pseudo labels: scene has no nonempty subclouds");

    WeakLabel weak_union;
    std::vector<std::pair<std::vector<int>, ScoreMap>> parts;
    parts.reserve(subs.size());
    for (const auto& sub : subs) {
      weak_union = weak_union.empty() ? sub.sample.weak_label
                                      : weak_label_or(weak_union, sub.sample.weak_label);
      parts.emplace_back(sub.sample.member_indices,
                         ScoreMap{subcloud_point_scores(model, sub, paths, options.fusion),
                                  PathId::Fused});
    }

    ScenePseudoLabels scene_out;
    if (options.use_crf) {
      if (scene.size() <= config.crf.max_points) {
        const ScoreMap merged = merge_overlapping_subclouds(parts, scene.size());
        const PseudoLabel refined = crf_refine(scene, merged, weak_union, config.crf);
        scene_out.labels = refined.labels;
        scene_out.scores = refined.scores;
      } else {
        // over budget: refine each subcloud on its own and merge the marginals
        std::vector<std::pair<std::vector<int>, ScoreMap>> refined_parts;
        refined_parts.reserve(subs.size());
        for (std::size_t i = 0; i < subs.size(); ++i) {
          std::vector<MarginalField> trace;
          crf_refine(subs[i].cloud, parts[i].second, subs[i].sample.weak_label, config.crf,
                     &trace);
          refined_parts.emplace_back(parts[i].first,
                                     ScoreMap{marginal_tensor(trace.back()), PathId::Fused});
        }
        const ScoreMap merged = merge_overlapping_subclouds(refined_parts, scene.size());
        const PseudoLabel final_label =
            pseudo_labels_from_pcam(merged, scene.positions, scene.positions, weak_union);
        scene_out.labels = final_label.labels;
        scene_out.scores = final_label.scores;
      }
    } else {
      const ScoreMap merged = merge_overlapping_subclouds(parts, scene.size());
      const PseudoLabel plain =
          pseudo_labels_from_pcam(merged, scene.positions, scene.positions, weak_union);
      scene_out.labels = plain.labels;
      scene_out.scores = plain.scores;
    }

    scene_out.metrics = evaluate_labels(scene_out.labels, scene.labels, config.model.num_classes);
    result.overall.accumulate(scene_out.metrics);
    result.scenes.push_back(std::move(scene_out));
  }
  return result;
}

PseudoLabelResult refine_hard_labels(const std::vector<PointCloud>& scenes,
                                     const std::vector<std::vector<int>>& labels,
                                     const PipelineConfig& config, double confidence) {
  validate_pipeline_config(config);
  if (confidence <= 0.0) throw DataError("refine: confidence must be positive");
  if (scenes.empty()) throw DataError("refine: no scenes");
  if (labels.size() != scenes.size())
    throw DataError("refine: label list does not match the scene list");

  const int classes = config.model.num_classes;
  auto one_hot_scores = [&](const std::vector<int>& lab) {
    std::vector<double> v(lab.size() * static_cast<std::size_t>(classes), 0.0);
    for (std::size_t i = 0; i < lab.size(); ++i)
      if (lab[i] >= 0) v[i * classes + lab[i]] = confidence;
    return Tensor::from_values({static_cast<int>(lab.size()), classes}, std::move(v));
  };
  auto presence = [&](const std::vector<int>& lab) {
    WeakLabel weak(classes, 0);
    for (int l : lab) {
      if (l >= classes) throw DataError("refine: label class out of range");
      if (l >= 0) weak[l] = 1;
    }
    return weak;
  };

  PseudoLabelResult result;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const PointCloud& scene = scenes[s];
    if (!scene.has_labels())
      throw DataError("refine: scene " + std::to_string(s) + " carries no ground truth");
    if (static_cast<int>(labels[s].size()) != scene.size())
      throw DataError("refine: scene " + std::to_string(s) + " label size mismatch");
    const WeakLabel weak = presence(labels[s]);

    ScenePseudoLabels out;
    if (scene.size() <= config.crf.max_points) {
      const ScoreMap map{one_hot_scores(labels[s]), PathId::Fused};
      const PseudoLabel refined = crf_refine(scene, map, weak, config.crf);
      out.labels = refined.labels;
      out.scores = refined.scores;
    } else {
      const SeedGrid grid = build_seed_grid(scene, config.subcloud_radius);
      const std::vector<SubcloudSample> subs =
          sample_subclouds(scene, grid, classes, false);
      if (subs.empty()) throw DataError("refine: scene has no nonempty subclouds");
      std::vector<std::pair<std::vector<int>, ScoreMap>> parts;
      parts.reserve(subs.size());
      for (const auto& sub : subs) {
        std::vector<int> member_labels;
        member_labels.reserve(sub.member_indices.size());
        for (int idx : sub.member_indices) member_labels.push_back(labels[s][idx]);
        const WeakLabel sub_weak = presence(member_labels);
        std::vector<MarginalField> trace;
        crf_refine(slice_cloud(scene, sub.member_indices),
                   ScoreMap{one_hot_scores(member_labels), PathId::Fused}, sub_weak, config.crf,
                   &trace);
        parts.emplace_back(sub.member_indices,
                           ScoreMap{marginal_tensor(trace.back()), PathId::Fused});
      }
      const ScoreMap merged = merge_overlapping_subclouds(parts, scene.size());
      const PseudoLabel final_label =
          pseudo_labels_from_pcam(merged, scene.positions, scene.positions, weak);
      out.labels = final_label.labels;
      out.scores = final_label.scores;
    }
    out.metrics = evaluate_labels(out.labels, scene.labels, classes);
    result.overall.accumulate(out.metrics);
    result.scenes.push_back(std::move(out));
  }
  return result;
}

// --- segmenter --------------------------------------------------------------

std::uint64_t segmenter_digest(const PipelineConfig& config) {
  return fnv1a64(
      config.model.plan.digest_string("seg", config.model.input_dim, config.model.num_classes));
}

TrainResult train_segmenter(const std::vector<PointCloud>& scenes,
                            const std::vector<std::vector<int>>& labels,
                            const PipelineConfig& config, const std::string& checkpoint_path,
                            std::ostream* log_stream) {
  validate_pipeline_config(config);
  if (scenes.empty()) throw DataError("segmenter training: no scenes");
  if (labels.size() != scenes.size())
    throw DataError("segmenter training: label list does not match the scene list");
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (static_cast<int>(labels[s].size()) != scenes[s].size())
      throw DataError("segmenter training: scene " + std::to_string(s) + " label size mismatch");
    for (int l : labels[s])
      if (l >= config.model.num_classes)
        throw DataError("segmenter training: label class out of range");
  }

  struct PreparedScene {
    CloudPyramid pyramid;
    Tensor features;
  };
  std::vector<PreparedScene> prepared;
  std::vector<int> sizes_all;
  prepared.reserve(scenes.size());
  for (const auto& scene : scenes) {
    prepared.push_back({build_pyramid(scene.positions, config.model.plan),
                        input_features(scene, config.black_indicator)});
    sizes_all.push_back(scene.size());
  }

  SegmentationNet net(config.model.plan, config.model.input_dim, config.model.num_classes,
                      derive_seed(config.seg_train.seed, 0x5e61417ULL));
  const TrainConfig& tc = config.seg_train;
  SgdMomentum opt(net.params(), tc.momentum);

  TrainResult result;
  result.digest = segmenter_digest(config);
  double epoch0_loss = 0.0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order(scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(tc.seed, 0x5e9c4ULL + static_cast<std::uint64_t>(epoch)));
    fisher_yates(order, shuffle_rng);

    std::vector<int> sizes;
    sizes.reserve(order.size());
    for (int idx : order) sizes.push_back(sizes_all[idx]);
    const std::vector<Batch> batches = stack_batches_by_size(sizes, tc.batch_point_limit);

    const double lr = learning_rate(tc.initial_lr, epoch);
    double loss_sum = 0.0;
    for (const Batch& batch : batches) {
      Tensor batch_loss;
      for (int pos : batch.stream_indices) {
        const int idx = order[pos];
        const Tensor logits = net.forward(prepared[idx].pyramid, prepared[idx].features);
        const Tensor term = softmax_xent_rows(logits, labels[idx]);
        batch_loss = batch_loss.defined() ? add(batch_loss, term) : term;
      }
      batch_loss = scale(batch_loss, 1.0 / batch.stream_indices.size());
      const double value = batch_loss.scalar_value();
      if (!std::isfinite(value))
        throw NumericError("segmenter training diverged at epoch " + std::to_string(epoch) +
                           " (batch loss is not finite)");
      opt.zero_grad();
      batch_loss.backward();
      opt.step(lr);
      loss_sum += value;
    }
    const TrainLogEntry entry{epoch, loss_sum / batches.size(), lr};
    result.log.push_back(entry);
    log_epoch(log_stream, entry);
    if (epoch == 0) epoch0_loss = entry.loss;
    if (tc.stop_loss_ratio > 0.0 && epoch > 0 && entry.loss < tc.stop_loss_ratio * epoch0_loss)
      break;
  }

  save_checkpoint(checkpoint_path, result.digest, net.params());
  return result;
}

EvalResult evaluate_segmenter(const std::vector<PointCloud>& scenes, const PipelineConfig& config,
                              const std::string& checkpoint_path) {
  validate_pipeline_config(config);
  if (scenes.empty()) throw DataError("evaluation: no scenes");

  SegmentationNet net(config.model.plan, config.model.input_dim, config.model.num_classes,
                      derive_seed(config.seg_train.seed, 0x5e61417ULL));
  std::vector<NamedParam> params = net.params();
  load_checkpoint(checkpoint_path, segmenter_digest(config), params);

  EvalResult result;
  for (const auto& scene : scenes) {
    if (!scene.has_labels()) throw DataError("evaluation: scene carries no labels");
    const CloudPyramid pyr = build_pyramid(scene.positions, config.model.plan);
    const Tensor feats = input_features(scene, config.black_indicator);
    const Tensor logits = net.forward(pyr, feats);
    const auto values = logits.values();
    const int classes = config.model.num_classes;

    SceneEval eval;
    eval.predictions.resize(scene.size());
    for (int i = 0; i < scene.size(); ++i) {
      int best = 0;
      for (int c = 1; c < classes; ++c)
        if (values[static_cast<std::size_t>(i) * classes + c] >
            values[static_cast<std::size_t>(i) * classes + best])
          best = c;
      eval.predictions[i] = best;
    }
    eval.metrics = evaluate_labels(eval.predictions, scene.labels, classes);
    result.overall.accumulate(eval.metrics);
    result.scenes.push_back(std::move(eval));
  }
  return result;
}

// --- ablations --------------------------------------------------------------

std::vector<AblationRow> run_ablation(const std::vector<PointCloud>& scenes,
                                      const PipelineConfig& config,
                                      const std::string& checkpoint_path, bool with_crf) {
  struct RowSpec {
    std::string name;
    PseudoLabelOptions options;
  };
  std::vector<RowSpec> rows;
  for (PathId p : {PathId::Plain, PathId::Spatial, PathId::Channel, PathId::Pointwise}) {
    RowSpec row;
    row.name = path_name(p);
    row.options.paths = {p};
    rows.push_back(std::move(row));
  }
  rows.push_back({"fused-max", PseudoLabelOptions{{}, FusionMode::Max, false}});
  rows.push_back({"fused-sum", PseudoLabelOptions{{}, FusionMode::Sum, false}});
  if (with_crf) rows.push_back({"fused-max+crf", PseudoLabelOptions{{}, FusionMode::Max, true}});

  std::vector<AblationRow> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const PseudoLabelResult result =
        generate_pseudo_labels(scenes, config, checkpoint_path, row.options);
    out.push_back({row.name, result.overall.miou()});
  }
  return out;
}

// --- scene and label files --------------------------------------------------

std::vector<std::string> list_scene_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".tsv" || ext == ".ply") names.push_back(entry.path().filename().string());
  }
  if (names.empty()) throw DataError("no scene files (.tsv or .ply) in " + dir);
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<PointCloud> load_scene_dir(const std::string& dir, std::vector<std::string>* names) {
  const std::vector<std::string> files = list_scene_files(dir);
  std::vector<PointCloud> scenes;
  scenes.reserve(files.size());
  for (const auto& name : files) {
    const std::string path = (fs::path(dir) / name).string();
    scenes.push_back(load_cloud(path, format_from_path(path)));
  }
  if (names) *names = files;
  return scenes;
}

void save_scene_dir(const std::vector<PointCloud>& scenes, const std::string& dir) {
  if (scenes.empty()) throw DataError("no scenes to save");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu.tsv", i);
    save_cloud((fs::path(dir) / name).string(), scenes[i], CloudFormat::XyzRgbLTsv);
  }
}

namespace {

nlohmann::json metrics_json_object(const Metrics& m) {
  nlohmann::json j;
  j["miou"] = m.miou();
  j["per_class_iou"] = m.per_class_iou();
  j["intersection"] = m.intersection;
  j["union"] = m.union_count;
  return j;
}

}  // namespace

std::string metrics_to_json(const Metrics& overall, const std::vector<Metrics>& per_scene,
                            const std::vector<std::string>& names) {
  if (per_scene.size() != names.size())
    throw DataError("metrics json: scene and name counts differ");
  nlohmann::json j;
  j["overall"] = metrics_json_object(overall);
  j["scenes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < per_scene.size(); ++i) {
    nlohmann::json scene = metrics_json_object(per_scene[i]);
    scene["name"] = names[i];
    j["scenes"].push_back(std::move(scene));
  }
  return j.dump(2) + "\n";
}

std::string metrics_to_json(const PseudoLabelResult& result,
                            const std::vector<std::string>& names) {
  std::vector<Metrics> per_scene;
  per_scene.reserve(result.scenes.size());
  for (const auto& s : result.scenes) per_scene.push_back(s.metrics);
  return metrics_to_json(result.overall, per_scene, names);
}

void write_pseudo_label_files(const std::vector<PointCloud>& scenes,
                              const std::vector<std::string>& names,
                              const PseudoLabelResult& result, const std::string& out_dir) {
  if (scenes.size() != result.scenes.size() || scenes.size() != names.size())
    throw DataError("pseudo-label export: scene, name and result counts differ");
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    PointCloud labeled = scenes[i];
    labeled.labels = result.scenes[i].labels;
    const std::string name = fs::path(names[i]).stem().string() + ".tsv";
    save_cloud((fs::path(out_dir) / name).string(), labeled, CloudFormat::XyzRgbLTsv);
  }
  std::ofstream out(fs::path(out_dir) / "metrics.json");
  if (!out) throw DataError("cannot write metrics.json in " + out_dir);
  out << metrics_to_json(result, names);
}

}  // namespace wp
