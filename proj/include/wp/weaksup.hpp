#pragma once

#include <cstdint>
#include <vector>

#include "wp/cloud.hpp"

namespace wp {

// Multi-hot class presence vector; index = class id.
using WeakLabel = std::vector<std::uint8_t>;

bool weak_label_empty(const WeakLabel& label);
bool weak_label_subset(const WeakLabel& inner, const WeakLabel& outer);
WeakLabel weak_label_or(const WeakLabel& a, const WeakLabel& b);

// Points strictly within `radius` of `seed`, with the classes present among
// the members when derived from ground truth.
struct SubcloudSample {
  Vec3 seed;
  double radius = 0.0;
  std::vector<int> member_indices;
  WeakLabel weak_label;  // empty when the cloud carries no labels
};

// Axis-aligned seed lattice covering the cloud's bounding box. Seeds sit at
// cell centers so every point is within (r/2)*sqrt(3) < r of some seed.
struct SeedGrid {
  BoundingBox box;
  double radius = 0.0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> xs, ys, zs;

  int total_seeds() const { return nx * ny * nz; }
  std::vector<Vec3> seeds() const;
};

SeedGrid build_seed_grid(const PointCloud& cloud, double radius);

struct SubcloudStats {
  int seeds_total = 0;
  int seeds_empty = 0;
};

// One sample per seed with nonempty membership; empty seeds are dropped and
// counted. with_labels derives weak labels from ground truth and requires a
// labeled cloud.
std::vector<SubcloudSample> sample_subclouds(const PointCloud& cloud, const SeedGrid& grid,
                                             int num_classes, bool with_labels,
                                             SubcloudStats* stats = nullptr);

// Random-seed variant used for scene-level training: draws seeds uniformly in
// the bounding box, rejection-sampled to nonempty membership, and attaches the
// scene-level label to every sample.
std::vector<SubcloudSample> sample_random_subclouds(const PointCloud& cloud, double radius,
                                                    int count, int num_classes,
                                                    const WeakLabel& scene_label, Rng& rng);

WeakLabel scene_weak_label(const PointCloud& cloud, int num_classes);

// Fraction of samples containing each class.
std::vector<double> class_frequencies(const std::vector<WeakLabel>& labels);

}  // namespace wp
