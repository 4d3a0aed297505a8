#include "wp/cloud.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace wp {

void PointCloud::validate() const {
  if (positions.empty()) throw DataError("point cloud is empty");
  if (colors.size() != positions.size())
    throw DataError("point cloud has " + std::to_string(positions.size()) + " positions but " +
                    std::to_string(colors.size()) + " colors");
  if (!labels.empty() && labels.size() != positions.size())
    throw DataError("point cloud has " + std::to_string(positions.size()) + " positions but " +
                    std::to_string(labels.size()) + " labels");
  for (const auto& p : positions)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw DataError("point cloud contains a non-finite position");
  for (const auto& c : colors)
    if (c.x < 0.0 || c.x > 1.0 || c.y < 0.0 || c.y > 1.0 || c.z < 0.0 || c.z > 1.0)
      throw DataError("point cloud color outside [0,1]");
  for (int l : labels)
    if (l < -1) throw DataError("point cloud label below -1");
}

BoundingBox bounding_box(const std::vector<Vec3>& points) {
  if (points.empty()) throw DataError("bounding_box: no points");
  BoundingBox box{points[0], points[0]};
  for (const auto& p : points) {
    box.min.x = std::min(box.min.x, p.x);
    box.min.y = std::min(box.min.y, p.y);
    box.min.z = std::min(box.min.z, p.z);
    box.max.x = std::max(box.max.x, p.x);
    box.max.y = std::max(box.max.y, p.y);
    box.max.z = std::max(box.max.z, p.z);
  }
  return box;
}

// --- KD-tree ----------------------------------------------------------------

namespace {
constexpr int kLeafSize = 16;

double axis_coord(const Vec3& p, int axis) {
  switch (axis) {
    case 0: return p.x;
    case 1: return p.y;
    default: return p.z;
  }
}
}  // namespace

KdTree::KdTree(const std::vector<Vec3>& points) : points_(points) {
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!points_.empty()) {
    nodes_.push_back({});
    build(0, 0, static_cast<int>(points_.size()));
  }
}

void KdTree::build(int slot, int begin, int end) {
  TreeNode node;
  node.begin = begin;
  node.end = end;
  if (end - begin <= kLeafSize) {
    nodes_[slot] = node;
    return;
  }
  // split on the widest axis at the median
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (int i = begin; i < end; ++i) {
    const Vec3& p = points_[order_[i]];
    lo.x = std::min(lo.x, p.x); hi.x = std::max(hi.x, p.x);
    lo.y = std::min(lo.y, p.y); hi.y = std::max(hi.y, p.y);
    lo.z = std::min(lo.z, p.z); hi.z = std::max(hi.z, p.z);
  }
  const Vec3 ext = hi - lo;
  int axis = 0;
  if (ext.y > ext.x) axis = 1;
  if (ext.z > axis_coord(ext, axis)) axis = 2;
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     return axis_coord(points_[a], axis) < axis_coord(points_[b], axis);
                   });
  node.axis = axis;
  node.split = axis_coord(points_[order_[mid]], axis);
  node.left = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  node.right = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[slot] = node;
  build(node.left, begin, mid);
  build(node.right, mid, end);
}

std::vector<int> KdTree::radius_search(const Vec3& query, double radius, int cap) const {
  std::vector<int> found;
  if (points_.empty()) return found;
  const double r2 = radius * radius;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const TreeNode& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        if (dist2(points_[idx], query) < r2) found.push_back(idx);
      }
      continue;
    }
    const double d = axis_coord(query, node.axis) - node.split;
    // strict < membership: a subtree farther than radius along the split axis
    // cannot contain members
    if (d < radius) stack.push_back(node.left);
    if (-d <= radius) stack.push_back(node.right);
  }
  std::sort(found.begin(), found.end(), [&](int a, int b) {
    const double da = dist2(points_[a], query), db = dist2(points_[b], query);
    if (da != db) return da < db;
    return a < b;
  });
  if (cap > 0 && static_cast<int>(found.size()) > cap) found.resize(cap);
  return found;
}

int KdTree::nearest(const Vec3& query) const {
  if (points_.empty()) throw DataError("nearest: empty tree");
  int best = -1;
  double best_d2 = 0.0;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const TreeNode& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        const double d2 = dist2(points_[idx], query);
        if (best < 0 || d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best = idx;
          best_d2 = d2;
        }
      }
      continue;
    }
    const double d = axis_coord(query, node.axis) - node.split;
    if (best < 0) {
      // descend the near side first, keep the far side for later
      if (d < 0) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
      continue;
    }
    if (d * d <= best_d2 || d < 0) stack.push_back(node.left);
    if (d * d <= best_d2 || d >= 0) stack.push_back(node.right);
  }
  return best;
}

NeighborIndex radius_neighbors(const std::vector<Vec3>& queries, const KdTree& support_tree,
                               double radius, int cap) {
  if (radius <= 0.0) throw std::invalid_argument("radius_neighbors: radius must be positive");
  NeighborIndex index;
  index.radius = radius;
  index.max_neighbors = cap;
  index.neighbors.reserve(queries.size());
  for (const auto& q : queries) index.neighbors.push_back(support_tree.radius_search(q, radius, cap));
  return index;
}

NeighborIndex radius_neighbors(const std::vector<Vec3>& queries,
                               const std::vector<Vec3>& supports, double radius, int cap) {
  return radius_neighbors(queries, KdTree(supports), radius, cap);
}

// --- grid subsampling -------------------------------------------------------

GridSubsampleResult grid_subsample(const PointCloud& cloud, double cell) {
  if (cell <= 0.0) throw std::invalid_argument("grid_subsample: cell must be positive");
  cloud.validate();
  const BoundingBox box = bounding_box(cloud.positions);
  struct Key {
    std::int64_t x, y, z;
    bool operator<(const Key& o) const {
      if (x != o.x) return x < o.x;
      if (y != o.y) return y < o.y;
      return z < o.z;
    }
  };
  std::map<Key, int> cells;
  GridSubsampleResult result;
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3 rel = cloud.positions[i] - box.min;
    const Key key{static_cast<std::int64_t>(std::floor(rel.x / cell)),
                  static_cast<std::int64_t>(std::floor(rel.y / cell)),
                  static_cast<std::int64_t>(std::floor(rel.z / cell))};
    auto [it, inserted] = cells.try_emplace(key, static_cast<int>(result.pooling_map.size()));
    if (inserted) result.pooling_map.emplace_back();
    result.pooling_map[it->second].push_back(i);
  }
  // output ordered by first occupancy
  std::vector<std::vector<int>> ordered(result.pooling_map.size());
  std::vector<int> first(result.pooling_map.size());
  for (std::size_t c = 0; c < result.pooling_map.size(); ++c) first[c] = result.pooling_map[c][0];
  std::vector<int> perm(result.pooling_map.size());
  for (std::size_t c = 0; c < perm.size(); ++c) perm[c] = static_cast<int>(c);
  std::sort(perm.begin(), perm.end(), [&](int a, int b) { return first[a] < first[b]; });
  for (std::size_t c = 0; c < perm.size(); ++c) ordered[c] = std::move(result.pooling_map[perm[c]]);
  result.pooling_map = std::move(ordered);

  const bool labeled = cloud.has_labels();
  for (const auto& members : result.pooling_map) {
    Vec3 pos{}, col{};
    std::map<int, int> votes;
    for (int i : members) {
      pos = pos + cloud.positions[i];
      col = col + cloud.colors[i];
      if (labeled && cloud.labels[i] >= 0) ++votes[cloud.labels[i]];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    result.cloud.positions.push_back(pos * inv);
    result.cloud.colors.push_back(col * inv);
    if (labeled) {
      int winner = -1, count = 0;
      for (auto [cls, n] : votes)  // ascending class id, so ties keep the smallest
        if (n > count) {
          winner = cls;
          count = n;
        }
      result.cloud.labels.push_back(winner);
    }
  }
  return result;
}

// --- file I/O ---------------------------------------------------------------

namespace {

int color_byte(double c) {
  return static_cast<int>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

double parse_double(const std::string& token, const std::string& path, int line_no) {
  double out = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw DataError(path + ":" + std::to_string(line_no) + ": bad number '" + token + "'");
  return out;
}

int parse_int(const std::string& token, const std::string& path, int line_no) {
  int out = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw DataError(path + ":" + std::to_string(line_no) + ": bad integer '" + token + "'");
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string t;
  while (is >> t) tokens.push_back(t);
  return tokens;
}

PointCloud load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  PointCloud cloud;
  std::string line;
  int line_no = 0;
  bool saw_labels = false, saw_unlabeled = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 6 && tokens.size() != 7)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 6 or 7 fields, got " +
                      std::to_string(tokens.size()));
    cloud.positions.push_back({parse_double(tokens[0], path, line_no),
                               parse_double(tokens[1], path, line_no),
                               parse_double(tokens[2], path, line_no)});
    Vec3 color{parse_double(tokens[3], path, line_no) / 255.0,
               parse_double(tokens[4], path, line_no) / 255.0,
               parse_double(tokens[5], path, line_no) / 255.0};
    color.x = std::clamp(color.x, 0.0, 1.0);
    color.y = std::clamp(color.y, 0.0, 1.0);
    color.z = std::clamp(color.z, 0.0, 1.0);
    cloud.colors.push_back(color);
    if (tokens.size() == 7) {
      cloud.labels.push_back(parse_int(tokens[6], path, line_no));
      saw_labels = true;
    } else {
      saw_unlabeled = true;
    }
  }
  if (saw_labels && saw_unlabeled)
    throw DataError(path + ": mixed labeled and unlabeled lines");
  if (cloud.positions.empty()) throw DataError(path + ": no points");
  cloud.validate();
  return cloud;
}

void save_tsv(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  char buf[160];
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    const Vec3& c = cloud.colors[i];
    int n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d %d", p.x, p.y, p.z,
                          color_byte(c.x), color_byte(c.y), color_byte(c.z));
    out.write(buf, n);
    if (cloud.has_labels()) {
      n = std::snprintf(buf, sizeof buf, " %d", cloud.labels[i]);
      out.write(buf, n);
    }
    out.put('\n');
  }
}

PointCloud load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) throw DataError(path + ": truncated header");
    ++line_no;
    return line;
  };
  if (next_line() != "ply") throw DataError(path + ": not a PLY file");
  int vertex_count = -1;
  std::vector<std::string> properties;
  bool in_vertex_element = false;
  while (true) {
    const auto tokens = split_ws(next_line());
    if (tokens.empty()) continue;
    if (tokens[0] == "format") {
      if (tokens.size() < 2 || tokens[1] != "ascii")
        throw DataError(path + ": only ascii PLY is supported");
    } else if (tokens[0] == "element") {
      in_vertex_element = tokens.size() >= 3 && tokens[1] == "vertex";
      if (in_vertex_element) vertex_count = parse_int(tokens[2], path, line_no);
    } else if (tokens[0] == "property" && in_vertex_element) {
      if (tokens.size() < 3) throw DataError(path + ":" + std::to_string(line_no) + ": bad property");
      properties.push_back(tokens.back());
    } else if (tokens[0] == "end_header") {
      break;
    }
  }
  if (vertex_count < 0) throw DataError(path + ": no vertex element");
  auto prop_index = [&](const std::string& name) {
    const auto it = std::find(properties.begin(), properties.end(), name);
    return it == properties.end() ? -1 : static_cast<int>(it - properties.begin());
  };
  const int ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
  const int ir = prop_index("red"), ig = prop_index("green"), ib = prop_index("blue");
  const int il = prop_index("label");
  if (ix < 0 || iy < 0 || iz < 0 || ir < 0 || ig < 0 || ib < 0)
    throw DataError(path + ": vertex element must carry x y z red green blue");
  PointCloud cloud;
  for (int v = 0; v < vertex_count; ++v) {
    const auto tokens = split_ws(next_line());
    if (static_cast<int>(tokens.size()) != static_cast<int>(properties.size()))
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(properties.size()) + " fields, got " +
                      std::to_string(tokens.size()));
    cloud.positions.push_back({parse_double(tokens[ix], path, line_no),
                               parse_double(tokens[iy], path, line_no),
                               parse_double(tokens[iz], path, line_no)});
    cloud.colors.push_back({std::clamp(parse_double(tokens[ir], path, line_no) / 255.0, 0.0, 1.0),
                            std::clamp(parse_double(tokens[ig], path, line_no) / 255.0, 0.0, 1.0),
                            std::clamp(parse_double(tokens[ib], path, line_no) / 255.0, 0.0, 1.0)});
    if (il >= 0) cloud.labels.push_back(parse_int(tokens[il], path, line_no));
  }
  if (cloud.positions.empty()) throw DataError(path + ": no points");
  cloud.validate();
  return cloud;
}

void save_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_labels()) out << "property int label\n";
  out << "end_header\n";
  char buf[160];
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    const Vec3& c = cloud.colors[i];
    int n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d %d %d", p.x, p.y, p.z,
                          color_byte(c.x), color_byte(c.y), color_byte(c.z));
    out.write(buf, n);
    if (cloud.has_labels()) {
      n = std::snprintf(buf, sizeof buf, " %d", cloud.labels[i]);
      out.write(buf, n);
    }
    out.put('\n');
  }
}

}  // namespace

CloudFormat format_from_name(const std::string& name) {
  if (name == "ply_ascii") return CloudFormat::PlyAscii;
  if (name == "xyzrgbl_tsv") return CloudFormat::XyzRgbLTsv;
  throw std::invalid_argument("unknown cloud format '" + name +
                              "' (expected ply_ascii or xyzrgbl_tsv)");
}

CloudFormat format_from_path(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".ply") return CloudFormat::PlyAscii;
  return CloudFormat::XyzRgbLTsv;
}

PointCloud load_cloud(const std::string& path, CloudFormat format) {
  return format == CloudFormat::PlyAscii ? load_ply(path) : load_tsv(path);
}

void save_cloud(const std::string& path, const PointCloud& cloud, CloudFormat format) {
  if (format == CloudFormat::PlyAscii)
    save_ply(path, cloud);
  else
    save_tsv(path, cloud);
}

}  // namespace wp
