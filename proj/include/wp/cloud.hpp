#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "wp/common.hpp"

namespace wp {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
};

inline double dist2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }
inline double dist(const Vec3& a, const Vec3& b) { return std::sqrt(dist2(a, b)); }

// Positions in meters, colors in [0,1], optional per-point class ids with -1
// meaning unclassified.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::vector<int> labels;  // empty when absent

  int size() const { return static_cast<int>(positions.size()); }
  bool has_labels() const { return !labels.empty(); }
  void validate() const;
};

struct BoundingBox {
  Vec3 min, max;
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return (min + max) * 0.5; }
};

BoundingBox bounding_box(const std::vector<Vec3>& points);

// Per-query neighbor lists within a strict radius, truncated to max_neighbors
// by ascending distance (ties by index). Lists are sorted (distance, index).
struct NeighborIndex {
  std::vector<std::vector<int>> neighbors;
  double radius = 0.0;
  int max_neighbors = 0;  // 0 = uncapped
};

// Median-split KD-tree over a fixed point set. The tree is an accelerator
// only; query results are exactly the brute-force set.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points);

  // indices of points with dist(p, query) < radius, sorted by (distance, index),
  // truncated to cap when cap > 0
  std::vector<int> radius_search(const Vec3& query, double radius, int cap = 0) const;
  int nearest(const Vec3& query) const;  // lowest index wins ties

 private:
  struct TreeNode {
    int begin = 0, end = 0;     // range into order_
    int axis = -1;              // -1 for leaf
    double split = 0.0;
    int left = -1, right = -1;  // child slots
  };
  void build(int slot, int begin, int end);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<TreeNode> nodes_;
};

NeighborIndex radius_neighbors(const std::vector<Vec3>& queries,
                               const std::vector<Vec3>& supports, double radius, int cap = 0);
NeighborIndex radius_neighbors(const std::vector<Vec3>& queries, const KdTree& support_tree,
                               double radius, int cap = 0);

struct GridSubsampleResult {
  PointCloud cloud;
  // member indices of the input cloud per output point
  std::vector<std::vector<int>> pooling_map;
};

// Voxel-barycenter downsampling; one output point per occupied cell, label by
// majority vote (-1 votes excluded, ties to the smallest class id). Output
// order follows first cell occupancy.
GridSubsampleResult grid_subsample(const PointCloud& cloud, double cell);

enum class CloudFormat { PlyAscii, XyzRgbLTsv };

CloudFormat format_from_name(const std::string& name);
CloudFormat format_from_path(const std::string& path);

PointCloud load_cloud(const std::string& path, CloudFormat format);
void save_cloud(const std::string& path, const PointCloud& cloud, CloudFormat format);

}  // namespace wp
