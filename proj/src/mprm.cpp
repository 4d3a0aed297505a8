#include "wp/mprm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wp {

const char* path_name(PathId id) {
  switch (id) {
    case PathId::Plain: return "plain";
    case PathId::Spatial: return "spatial";
    case PathId::Channel: return "channel";
    case PathId::Pointwise: return "pointwise";
    case PathId::Fused: return "fused";
  }
  return "unknown";
}

void AttentionState::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  if (proj_b.defined()) out.push_back({prefix + ".b", proj_b});
  if (proj_c.defined()) out.push_back({prefix + ".c", proj_c});
  if (proj_d.defined()) out.push_back({prefix + ".d", proj_d});
  if (proj_out.defined()) out.push_back({prefix + ".out", proj_out});
  if (gate.defined()) out.push_back({prefix + ".gate", gate});
}

AttentionState make_projection_attention(int width, int reduced, bool with_gate, Rng& rng) {
  if (width < 1 || reduced < 1)
    throw DataError("attention: widths must be positive, got " + std::to_string(width) + "/" +
                    std::to_string(reduced));
  AttentionState st;
  st.proj_b = kaiming_uniform({width, reduced}, width, rng);
  st.proj_c = kaiming_uniform({width, reduced}, width, rng);
  st.proj_d = kaiming_uniform({width, reduced}, width, rng);
  st.proj_out = kaiming_uniform({reduced, width}, reduced, rng);
  if (with_gate) st.gate = Tensor::zeros({1, 1}, true);
  return st;
}

AttentionState make_gate_only_attention() {
  AttentionState st;
  st.gate = Tensor::zeros({1, 1}, true);
  return st;
}

namespace {

// F' of the spatial formulation: softmax_rows(C·Bᵀ)·D projected back to the
// input width. Shared by the spatial and point-wise paths.
Tensor projected_aggregation(const Tensor& a, const AttentionState& st) {
  Tensor bp = matmul(a, st.proj_b);
  Tensor cp = matmul(a, st.proj_c);
  Tensor dp = matmul(a, st.proj_d);
  Tensor e = softmax_rows(matmul(cp, transpose(bp)));
  return matmul(matmul(e, dp), st.proj_out);
}

}  // namespace

Tensor spatial_attention_forward(const Tensor& a, const AttentionState& state) {
  if (!state.proj_b.defined() || !state.gate.defined())
    throw DataError("spatial attention: state is missing projections or the gate");
  return add(scale_by(state.gate, projected_aggregation(a, state)), a);
}

Tensor channel_attention_forward(const Tensor& a, const AttentionState& state) {
  if (!state.gate.defined()) throw DataError("channel attention: state is missing the gate");
  Tensor e = softmax_rows(matmul(transpose(a), a));
  Tensor agg = matmul(a, transpose(e));
  return add(scale_by(state.gate, agg), a);
}

Tensor pointwise_attention_forward(const Tensor& a, const AttentionState& state) {
  if (!state.proj_b.defined())
    throw DataError("point-wise attention: state is missing projections");
  return concat_cols(projected_aggregation(a, state), a);
}

Tensor weak_label_target(const WeakLabel& weak) {
  std::vector<double> v(weak.size());
  for (std::size_t i = 0; i < weak.size(); ++i) v[i] = weak[i] ? 1.0 : 0.0;
  return Tensor::from_values({1, static_cast<int>(weak.size())}, std::move(v));
}

ScoreMap compute_pcam(const Tensor& path_feats, const Tensor& classifier, const WeakLabel& weak,
                      PathId path) {
  if (weak_label_empty(weak))
    throw DataError("activation map: weak label has no positive class");
  const int classes = classifier.cols();
  if (static_cast<int>(weak.size()) != classes)
    throw DataError("activation map: weak label width " + std::to_string(weak.size()) +
                    " does not match " + std::to_string(classes) + " classes");
  Tensor raw = matmul(path_feats, classifier);
  std::vector<double> mask(static_cast<std::size_t>(raw.rows()) * classes);
  for (int i = 0; i < raw.rows(); ++i)
    for (int c = 0; c < classes; ++c)
      mask[static_cast<std::size_t>(i) * classes + c] = weak[c] ? 1.0 : 0.0;
  ScoreMap map;
  map.scores = mul(raw, Tensor::from_values({raw.rows(), classes}, std::move(mask)));
  map.path = path;
  return map;
}

Tensor classification_logits(const Tensor& path_feats, const Tensor& classifier,
                             double dropout_rate, bool training, std::uint64_t dropout_seed) {
  Tensor h = dropout(path_feats, dropout_rate, training, dropout_seed);
  return global_average_pool(matmul(h, classifier));
}

ScoreMap fuse_pcams(const std::vector<ScoreMap>& maps, FusionMode mode) {
  if (maps.empty()) throw DataError("fusion: no maps given");
  for (const auto& m : maps)
    if (m.scores.shape() != maps[0].scores.shape())
      throw std::invalid_argument("fusion: map shapes differ, " + shape_str(m.scores.shape()) +
                                  " vs " + shape_str(maps[0].scores.shape()));
  ScoreMap out;
  out.path = PathId::Fused;
  Tensor acc = maps[0].scores;
  for (std::size_t i = 1; i < maps.size(); ++i) {
    acc = mode == FusionMode::Max ? elementwise_max(acc, maps[i].scores)
                                  : add(acc, maps[i].scores);
  }
  if (mode == FusionMode::Sum) acc = scale(acc, 1.0 / static_cast<double>(maps.size()));
  out.scores = acc;
  return out;
}

PseudoLabel pseudo_labels_from_pcam(const ScoreMap& map, const std::vector<Vec3>& fine_positions,
                                    const std::vector<Vec3>& coarse_positions,
                                    const WeakLabel& weak) {
  if (weak_label_empty(weak))
    throw DataError("pseudo labels: weak label has no positive class");
  const int classes = map.scores.cols();
  if (static_cast<int>(weak.size()) != classes)
    throw DataError("pseudo labels: weak label width does not match the score map");
  if (map.scores.rows() != static_cast<int>(coarse_positions.size()))
    throw std::invalid_argument("pseudo labels: score map rows " +
                                std::to_string(map.scores.rows()) + " vs " +
                                std::to_string(coarse_positions.size()) + " coarse positions");
  const auto idx = nearest_indices(fine_positions, coarse_positions);
  PseudoLabel out;
  out.labels.resize(fine_positions.size());
  out.scores.resize(fine_positions.size());
  const auto sv = map.scores.values();
  for (std::size_t i = 0; i < fine_positions.size(); ++i) {
    const double* row = &sv[static_cast<std::size_t>(idx[i]) * classes];
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c) {
      if (!weak[c]) continue;
      if (row[c] > best_score) {
        best_score = row[c];
        best = c;
      }
    }
    out.labels[i] = best;
    out.scores[i] = best_score;
  }
  return out;
}

ScoreMap merge_overlapping_subclouds(
    const std::vector<std::pair<std::vector<int>, ScoreMap>>& parts, int scene_size) {
  if (parts.empty()) throw DataError("merge: no subclouds given");
  const int classes = parts[0].second.scores.cols();
  std::vector<double> acc(static_cast<std::size_t>(scene_size) * classes,
                          -std::numeric_limits<double>::infinity());
  std::vector<char> covered(scene_size, 0);
  for (const auto& [members, map] : parts) {
    if (map.scores.cols() != classes)
      throw std::invalid_argument("merge: class count differs between subclouds");
    if (map.scores.rows() != static_cast<int>(members.size()))
      throw std::invalid_argument("merge: score rows " + std::to_string(map.scores.rows()) +
                                  " vs " + std::to_string(members.size()) + " members");
    const auto sv = map.scores.values();
    for (std::size_t r = 0; r < members.size(); ++r) {
      const int p = members[r];
      if (p < 0 || p >= scene_size)
        throw std::invalid_argument("merge: member index " + std::to_string(p) +
                                    " outside the scene");
      covered[p] = 1;
      double* dst = &acc[static_cast<std::size_t>(p) * classes];
      const double* src = &sv[r * classes];
      for (int c = 0; c < classes; ++c) dst[c] = std::max(dst[c], src[c]);
    }
  }
  for (int p = 0; p < scene_size; ++p)
    if (!covered[p])
      throw DataError("merge: point " + std::to_string(p) + " is covered by no subcloud");
  ScoreMap out;
  out.path = PathId::Fused;
  out.scores = Tensor::from_values({scene_size, classes}, std::move(acc));
  return out;
}

// --- the four-head model ----------------------------------------------------

MprmModel::MprmModel(const MprmConfig& config)
    : config_(config),
      backbone_(config.plan, config.input_dim, derive_seed(config.init_seed, 0xbbULL)) {
  if (config.num_classes < 1) throw DataError("model: need at least one class");
  const int width = backbone_.feature_dim();
  const int reduced = std::max(1, width / std::max(1, config.attention_reduce));
  Rng rng(derive_seed(config.init_seed, 0xa77ULL));
  spatial_state_ = make_projection_attention(width, reduced, /*with_gate=*/true, rng);
  channel_state_ = make_gate_only_attention();
  pointwise_state_ = make_projection_attention(width, reduced, /*with_gate=*/false, rng);
  Rng crng(derive_seed(config.init_seed, 0xc15ULL));
  cls_plain_ = uniform_init({width, config.num_classes}, 0.01, crng);
  cls_spatial_ = uniform_init({width, config.num_classes}, 0.01, crng);
  cls_channel_ = uniform_init({width, config.num_classes}, 0.01, crng);
  cls_pointwise_ = uniform_init({2 * width, config.num_classes}, 0.01, crng);
}

Tensor MprmModel::backbone_features(const CloudPyramid& pyr, const Tensor& input_feats) const {
  return backbone_.forward(pyr, input_feats);
}

MprmModel::PathLogits MprmModel::forward_logits(const CloudPyramid& pyr,
                                                const Tensor& input_feats, bool training,
                                                std::uint64_t dropout_seed) const {
  Tensor a = backbone_.forward(pyr, input_feats);
  PathLogits out;
  out.plain = classification_logits(a, cls_plain_, config_.dropout_rate, training,
                                    derive_seed(dropout_seed, 0));
  out.spatial = classification_logits(spatial_attention_forward(a, spatial_state_), cls_spatial_,
                                      config_.dropout_rate, training, derive_seed(dropout_seed, 1));
  out.channel = classification_logits(channel_attention_forward(a, channel_state_), cls_channel_,
                                      config_.dropout_rate, training, derive_seed(dropout_seed, 2));
  out.pointwise =
      classification_logits(pointwise_attention_forward(a, pointwise_state_), cls_pointwise_,
                            config_.dropout_rate, training, derive_seed(dropout_seed, 3));
  return out;
}

Tensor MprmModel::training_loss(const PathLogits& logits, const WeakLabel& weak,
                                const std::vector<bool>& path_mask) const {
  if (!path_mask.empty() && path_mask.size() != 4)
    throw DataError("loss: path mask must list exactly 4 paths");
  const auto on = [&](int i) { return path_mask.empty() || path_mask[i]; };
  Tensor target = weak_label_target(weak);
  Tensor total;
  const Tensor* paths[4] = {&logits.plain, &logits.spatial, &logits.channel, &logits.pointwise};
  for (int i = 0; i < 4; ++i) {
    if (!on(i)) continue;
    Tensor term = sigmoid_bce(*paths[i], target);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) throw DataError("loss: every path is masked out");
  return total;
}

std::vector<ScoreMap> MprmModel::compute_pcams(const CloudPyramid& pyr, const Tensor& input_feats,
                                               const WeakLabel& weak) const {
  Tensor a = backbone_.forward(pyr, input_feats);
  std::vector<ScoreMap> maps;
  maps.push_back(compute_pcam(a, cls_plain_, weak, PathId::Plain));
  maps.push_back(compute_pcam(spatial_attention_forward(a, spatial_state_), cls_spatial_, weak,
                              PathId::Spatial));
  maps.push_back(compute_pcam(channel_attention_forward(a, channel_state_), cls_channel_, weak,
                              PathId::Channel));
  maps.push_back(compute_pcam(pointwise_attention_forward(a, pointwise_state_), cls_pointwise_,
                              weak, PathId::Pointwise));
  return maps;
}

std::vector<NamedParam> MprmModel::params() const {
  std::vector<NamedParam> out = backbone_.params();
  spatial_state_.collect("att_sp", out);
  channel_state_.collect("att_ch", out);
  pointwise_state_.collect("att_pw", out);
  out.push_back({"cls_plain.w", cls_plain_});
  out.push_back({"cls_sp.w", cls_spatial_});
  out.push_back({"cls_ch.w", cls_channel_});
  out.push_back({"cls_pw.w", cls_pointwise_});
  return out;
}

std::uint64_t MprmModel::digest() const {
  return fnv1a64(config_.plan.digest_string("mprm", config_.input_dim, config_.num_classes) +
                 "|ar=" + std::to_string(config_.attention_reduce));
}

}  // namespace wp
