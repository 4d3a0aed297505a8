#include "wp/weaksup.hpp"

#include <algorithm>
#include <cmath>

namespace wp {

bool weak_label_empty(const WeakLabel& label) {
  return std::none_of(label.begin(), label.end(), [](std::uint8_t b) { return b != 0; });
}

bool weak_label_subset(const WeakLabel& inner, const WeakLabel& outer) {
  if (inner.size() != outer.size()) return false;
  for (std::size_t c = 0; c < inner.size(); ++c)
    if (inner[c] && !outer[c]) return false;
  return true;
}

WeakLabel weak_label_or(const WeakLabel& a, const WeakLabel& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("weak_label_or: class counts differ");
  WeakLabel out(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) out[c] = (a[c] || b[c]) ? 1 : 0;
  return out;
}

std::vector<Vec3> SeedGrid::seeds() const {
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(total_seeds()));
  for (double x : xs)
    for (double y : ys)
      for (double z : zs) out.push_back({x, y, z});
  return out;
}

namespace {

void axis_seeds(double lo, double hi, double radius, int& n, std::vector<double>& coords) {
  const double len = hi - lo;
  n = std::max(1, static_cast<int>(std::ceil(len / radius)));
  coords.clear();
  const double step = len / n;
  for (int k = 0; k < n; ++k) coords.push_back(lo + (k + 0.5) * step);
}

WeakLabel label_from_members(const PointCloud& cloud, const std::vector<int>& members,
                             int num_classes) {
  WeakLabel label(num_classes, 0);
  for (int i : members) {
    const int l = cloud.labels[i];
    if (l < 0) continue;
    if (l >= num_classes)
      throw DataError("point label " + std::to_string(l) + " exceeds class count " +
                      std::to_string(num_classes));
    label[l] = 1;
  }
  return label;
}

}  // namespace

SeedGrid build_seed_grid(const PointCloud& cloud, double radius) {
  if (radius <= 0.0) throw std::invalid_argument("build_seed_grid: radius must be positive");
  cloud.validate();
  SeedGrid grid;
  grid.box = bounding_box(cloud.positions);
  grid.radius = radius;
  axis_seeds(grid.box.min.x, grid.box.max.x, radius, grid.nx, grid.xs);
  axis_seeds(grid.box.min.y, grid.box.max.y, radius, grid.ny, grid.ys);
  axis_seeds(grid.box.min.z, grid.box.max.z, radius, grid.nz, grid.zs);
  return grid;
}

std::vector<SubcloudSample> sample_subclouds(const PointCloud& cloud, const SeedGrid& grid,
                                             int num_classes, bool with_labels,
                                             SubcloudStats* stats) {
  if (with_labels && !cloud.has_labels())
    throw DataError("sample_subclouds: labeled subclouds requested from an unlabeled cloud");
  KdTree tree(cloud.positions);
  std::vector<SubcloudSample> samples;
  int empty = 0;
  for (const Vec3& seed : grid.seeds()) {
    SubcloudSample sample;
    sample.seed = seed;
    sample.radius = grid.radius;
    sample.member_indices = tree.radius_search(seed, grid.radius);
    if (sample.member_indices.empty()) {
      ++empty;
      continue;
    }
    if (with_labels)
      sample.weak_label = label_from_members(cloud, sample.member_indices, num_classes);
    samples.push_back(std::move(sample));
  }
  if (stats) {
    stats->seeds_total = grid.total_seeds();
    stats->seeds_empty = empty;
  }
  return samples;
}

std::vector<SubcloudSample> sample_random_subclouds(const PointCloud& cloud, double radius,
                                                    int count, int num_classes,
                                                    const WeakLabel& scene_label, Rng& rng) {
  if (radius <= 0.0)
    throw std::invalid_argument("sample_random_subclouds: radius must be positive");
  if (static_cast<int>(scene_label.size()) != num_classes)
    throw std::invalid_argument("sample_random_subclouds: scene label width mismatch");
  cloud.validate();
  const BoundingBox box = bounding_box(cloud.positions);
  KdTree tree(cloud.positions);
  std::vector<SubcloudSample> samples;
  const int max_attempts = count * 100 + 100;
  int attempts = 0;
  while (static_cast<int>(samples.size()) < count && attempts < max_attempts) {
    ++attempts;
    const Vec3 seed{uniform(rng, box.min.x, box.max.x), uniform(rng, box.min.y, box.max.y),
                    uniform(rng, box.min.z, box.max.z)};
    auto members = tree.radius_search(seed, radius);
    if (members.empty()) continue;
    SubcloudSample sample;
    sample.seed = seed;
    sample.radius = radius;
    sample.member_indices = std::move(members);
    sample.weak_label = scene_label;
    samples.push_back(std::move(sample));
  }
  if (static_cast<int>(samples.size()) < count)
    throw DataError("sample_random_subclouds: rejection sampling failed to find " +
                    std::to_string(count) + " nonempty subclouds");
  return samples;
}

WeakLabel scene_weak_label(const PointCloud& cloud, int num_classes) {
  if (!cloud.has_labels()) throw DataError("scene_weak_label: cloud has no labels");
  WeakLabel label(num_classes, 0);
  bool any = false;
  for (int l : cloud.labels) {
    if (l < 0) continue;
    if (l >= num_classes)
      throw DataError("point label " + std::to_string(l) + " exceeds class count " +
                      std::to_string(num_classes));
    label[l] = 1;
    any = true;
  }
  if (!any) throw DataError("scene_weak_label: every point is unclassified");
  return label;
}

std::vector<double> class_frequencies(const std::vector<WeakLabel>& labels) {
  if (labels.empty()) throw std::invalid_argument("class_frequencies: no labels");
  const std::size_t num_classes = labels.front().size();
  std::vector<double> freq(num_classes, 0.0);
  for (const auto& label : labels) {
    if (label.size() != num_classes)
      throw std::invalid_argument("class_frequencies: inconsistent label widths");
    for (std::size_t c = 0; c < num_classes; ++c)
      if (label[c]) freq[c] += 1.0;
  }
  for (auto& f : freq) f /= static_cast<double>(labels.size());
  return freq;
}

}  // namespace wp
