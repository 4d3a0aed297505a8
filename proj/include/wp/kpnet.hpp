#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wp/cloud.hpp"
#include "wp/tensor.hpp"

namespace wp {

// Fixed set of kernel-point offsets in the unit ball; offsets[0] is pinned at
// the origin. sigma is the influence distance as a fraction of the kernel
// radius.
struct KernelDisposition {
  std::vector<Vec3> offsets;
  double sigma = 0.3;

  int count() const { return static_cast<int>(offsets.size()); }
  double min_pairwise_distance() const;
};

// Origin point plus K-1 points spread by repulsive relaxation, deterministic
// per seed.
KernelDisposition build_kernel_disposition(int num_points, std::uint64_t seed,
                                           double sigma = 0.3);

// out_i = sum_{j in N(i)} sum_k h(y_ij, x_k) (feats_j . W_k) with
// y_ij = (p_j - q_i)/radius and h = max(0, 1 - |y - x|/sigma). Queries with no
// neighbors produce zero rows.
Tensor kpconv_forward(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                      const Tensor& feats, const NeighborIndex& neighbors,
                      const Tensor& weights /* [K,Cin,Cout] */, const KernelDisposition& disp,
                      double radius);

// For each fine position, the index of its nearest coarse position (ties to
// the lowest index).
std::vector<int> nearest_indices(const std::vector<Vec3>& fine,
                                 const std::vector<Vec3>& coarse);

Tensor upsample_nearest(const Tensor& coarse_feats, const std::vector<Vec3>& fine_positions,
                        const std::vector<Vec3>& coarse_positions);

// Rows (r, g, b, 1); with black_indicator, the fourth channel is 1 only for
// rgb = (0,0,0).
Tensor input_features(const PointCloud& cloud, bool black_indicator = false);

// --- multi-resolution geometry ---------------------------------------------

struct LevelGeometry {
  std::vector<Vec3> points;
  double cell = 0.0;
  double conv_radius = 0.0;
  NeighborIndex self_neighbors;
  // to the next coarser level (unset at the top level)
  NeighborIndex down_neighbors;                // queries = next level's points
  std::vector<std::vector<int>> pool_map;      // members per next-level point
  std::vector<int> up_nearest;                 // per point: nearest next-level index
};

struct CloudPyramid {
  std::vector<LevelGeometry> levels;
  // per level-0 point, nearest index into the coarsest level
  std::vector<int> top_to_base_nearest;

  int level_size(int level) const { return static_cast<int>(levels[level].points.size()); }
};

// Shared shape description of a network: resolutions, radii, widths.
struct LayerPlan {
  double base_cell = 0.04;
  double radius_factor = 2.5;
  std::vector<int> widths;     // one per level
  int kernel_points = 15;
  double sigma_ratio = 0.3;
  int neighbor_cap = 40;

  int num_levels() const { return static_cast<int>(widths.size()); }
  std::string digest_string(const std::string& arch, int input_dim, int num_classes) const;
};

std::uint64_t fnv1a64(const std::string& text);

CloudPyramid build_pyramid(const std::vector<Vec3>& points, const LayerPlan& plan);

// --- layers -----------------------------------------------------------------

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// 1x1 convolution: matmul plus optional bias.
class UnaryConv {
 public:
  UnaryConv() = default;
  UnaryConv(std::string name, int cin, int cout, Rng& rng, bool with_bias = true,
            bool zero_init = false);
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<NamedParam>& out) const;
  Tensor weight() const { return weight_; }

 private:
  std::string name_;
  Tensor weight_;
  Tensor bias_;
};

class KPConvLayer {
 public:
  KPConvLayer() = default;
  KPConvLayer(std::string name, int cin, int cout, const KernelDisposition& disp, Rng& rng);
  Tensor forward(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                 const Tensor& feats, const NeighborIndex& neighbors, double radius) const;
  void collect(std::vector<NamedParam>& out) const;

 private:
  std::string name_;
  Tensor weight_;  // [K, Cin, Cout]
  Tensor bias_;
  KernelDisposition disp_;
};

// Residual bottleneck: 1x1 reduce -> kpconv -> linear 1x1 expand, added to the
// (projected) shortcut with no post-add activation, so a zero expand leaves
// the shortcut untouched. The strided variant evaluates queries on the next
// level and max-pools the shortcut over the pooling map.
class BottleneckBlock {
 public:
  BottleneckBlock() = default;
  BottleneckBlock(std::string name, int cin, int cout, bool strided,
                  const KernelDisposition& disp, Rng& rng);
  // level = index of the block's input level in the pyramid
  Tensor forward(const CloudPyramid& pyr, int level, const Tensor& x) const;
  void collect(std::vector<NamedParam>& out) const;
  bool strided() const { return strided_; }

 private:
  std::string name_;
  bool strided_ = false;
  UnaryConv reduce_;
  KPConvLayer conv_;
  UnaryConv expand_;
  std::optional<UnaryConv> shortcut_;
};

// --- networks ---------------------------------------------------------------

// Simple conv stem + 5 bottleneck blocks with the 2nd and 4th strided; two
// downsamplings total, output feature map lives on the coarsest level.
class ClassificationBackbone {
 public:
  ClassificationBackbone(const LayerPlan& plan, int input_dim, std::uint64_t init_seed);
  Tensor forward(const CloudPyramid& pyr, const Tensor& input_feats) const;
  std::vector<NamedParam> params() const;
  const LayerPlan& plan() const { return plan_; }
  int feature_dim() const { return plan_.widths.back(); }

 private:
  LayerPlan plan_;
  int input_dim_;
  KernelDisposition disp_;
  KPConvLayer stem_;
  std::vector<BottleneckBlock> blocks_;
};

// Encoder of repeated [bottleneck, bottleneck, strided] + nearest-upsampling
// decoder with skip concatenation; per-point class logits out.
class SegmentationNet {
 public:
  SegmentationNet(const LayerPlan& plan, int input_dim, int num_classes,
                  std::uint64_t init_seed);
  Tensor forward(const CloudPyramid& pyr, const Tensor& input_feats) const;
  std::vector<NamedParam> params() const;
  const LayerPlan& plan() const { return plan_; }
  int num_classes() const { return num_classes_; }

 private:
  LayerPlan plan_;
  int input_dim_;
  int num_classes_;
  KernelDisposition disp_;
  KPConvLayer stem_;
  std::vector<std::vector<BottleneckBlock>> encoder_;  // per level: two plain + strided
  std::vector<UnaryConv> decoder_;                     // per level: concat projection
  UnaryConv head_;
};

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::string& path, std::uint64_t plan_digest,
                     const std::vector<NamedParam>& params);
// Validates digest, names and shapes, then copies stored values into params.
void load_checkpoint(const std::string& path, std::uint64_t plan_digest,
                     std::vector<NamedParam>& params);

}  // namespace wp
