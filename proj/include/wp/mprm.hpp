#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wp/kpnet.hpp"
#include "wp/weaksup.hpp"

namespace wp {

enum class PathId { Plain, Spatial, Channel, Pointwise, Fused };

const char* path_name(PathId id);

// Per-point per-class activation map. scores rows index the cloud level the
// map was computed at (the coarsest level for fresh maps, the scene cloud
// after merging).
struct ScoreMap {
  Tensor scores;
  PathId path = PathId::Plain;
};

// Per-point class assignment with the winning activation recorded.
struct PseudoLabel {
  std::vector<int> labels;
  std::vector<double> scores;
};

// Learnable pieces of one attention module. The spatial and point-wise paths
// use all three input projections plus the output projection; the channel
// path keeps only the scalar gate. Gates start at exactly 0 so a fresh module
// is the identity on its additive paths.
struct AttentionState {
  Tensor proj_b, proj_c, proj_d;  // [C x C1]
  Tensor proj_out;                // [C1 x C]
  Tensor gate;                    // [1 x 1]

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

AttentionState make_projection_attention(int width, int reduced, bool with_gate, Rng& rng);
AttentionState make_gate_only_attention();

// out = gate * ((softmax_rows(C·Bᵀ)·D)·Wout) + A, attention weights for
// destination j normalized over sources i.
Tensor spatial_attention_forward(const Tensor& a, const AttentionState& state);
// out = gate * (A·Eᵀ) + A with E = softmax_rows(Aᵀ·A); no projections.
Tensor channel_attention_forward(const Tensor& a, const AttentionState& state);
// Spatial-style aggregation concatenated to the input: [F' | A], width 2C.
Tensor pointwise_attention_forward(const Tensor& a, const AttentionState& state);

Tensor weak_label_target(const WeakLabel& weak);

// scores = feats·classifier with negative-class columns forced to exact zero.
ScoreMap compute_pcam(const Tensor& path_feats, const Tensor& classifier,
                      const WeakLabel& weak, PathId path);

// dropout -> 1x1 classifier -> global average pool; with dropout off the
// logits equal the column means of the unmasked score map.
Tensor classification_logits(const Tensor& path_feats, const Tensor& classifier,
                             double dropout_rate, bool training, std::uint64_t dropout_seed);

enum class FusionMode { Max, Sum };

// Element-wise max across paths; Sum mode averages so that identical inputs
// fuse to the same map under either mode (argmax is scale-invariant).
ScoreMap fuse_pcams(const std::vector<ScoreMap>& maps, FusionMode mode = FusionMode::Max);

// Nearest-neighbor upsample to the fine cloud, then per-point argmax over the
// weak label's positive classes (ties to the smallest class id).
PseudoLabel pseudo_labels_from_pcam(const ScoreMap& map, const std::vector<Vec3>& fine_positions,
                                    const std::vector<Vec3>& coarse_positions,
                                    const WeakLabel& weak);

// Per-point per-class max over every subcloud covering the point. A point no
// subcloud covers is a contract violation and names the point.
ScoreMap merge_overlapping_subclouds(
    const std::vector<std::pair<std::vector<int>, ScoreMap>>& parts, int scene_size);

// --- the four-head model ----------------------------------------------------

struct MprmConfig {
  LayerPlan plan;  // 3 levels
  int input_dim = 4;
  int num_classes = 0;
  int attention_reduce = 4;  // C1 = C / attention_reduce
  double dropout_rate = 0.5;
  std::uint64_t init_seed = 1;
};

class MprmModel {
 public:
  explicit MprmModel(const MprmConfig& config);

  struct PathLogits {
    Tensor plain, spatial, channel, pointwise;
  };

  Tensor backbone_features(const CloudPyramid& pyr, const Tensor& input_feats) const;
  PathLogits forward_logits(const CloudPyramid& pyr, const Tensor& input_feats, bool training,
                            std::uint64_t dropout_seed) const;
  // Sum of the four per-path sigmoid cross-entropies; path_mask selects a
  // subset (ablations), order plain/spatial/channel/pointwise.
  Tensor training_loss(const PathLogits& logits, const WeakLabel& weak,
                       const std::vector<bool>& path_mask = {}) const;
  // Eval-mode PCAMs at the coarsest level, masked, order
  // plain/spatial/channel/pointwise.
  std::vector<ScoreMap> compute_pcams(const CloudPyramid& pyr, const Tensor& input_feats,
                                      const WeakLabel& weak) const;

  std::vector<NamedParam> params() const;
  std::uint64_t digest() const;
  const MprmConfig& config() const { return config_; }

 private:
  MprmConfig config_;
  ClassificationBackbone backbone_;
  AttentionState spatial_state_, channel_state_, pointwise_state_;
  Tensor cls_plain_, cls_spatial_, cls_channel_, cls_pointwise_;
};

}  // namespace wp
