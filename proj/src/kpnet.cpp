#include "wp/kpnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

namespace wp {

double KernelDisposition::min_pairwise_distance() const {
  const int k = count();
  if (k < 2) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) best = std::min(best, dist(offsets[i], offsets[j]));
  return best;
}

KernelDisposition build_kernel_disposition(int num_points, std::uint64_t seed, double sigma) {
  if (num_points < 1) throw DataError("kernel disposition: need at least one point");
  if (sigma <= 0.0) throw DataError("kernel disposition: sigma must be positive");
  KernelDisposition disp;
  disp.sigma = sigma;
  disp.offsets.assign(num_points, Vec3{});
  if (num_points == 1) return disp;

  Rng rng(seed);
  for (int i = 1; i < num_points; ++i) {
    for (;;) {
      const Vec3 p{uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
      if (p.norm2() <= 1.0) {
        disp.offsets[i] = p;
        break;
      }
    }
  }

  // Inverse-square repulsion between all pairs; the origin point stays fixed
  // and pushes the rest outward. Capped steps, cap annealed over a fixed
  // iteration budget, positions projected back into the unit ball.
  const int iterations = 2000;
  std::vector<Vec3> force(num_points);
  for (int it = 0; it < iterations; ++it) {
    for (int i = 1; i < num_points; ++i) {
      Vec3 f{};
      for (int j = 0; j < num_points; ++j) {
        if (j == i) continue;
        Vec3 d = disp.offsets[i] - disp.offsets[j];
        double n = d.norm();
        if (n < 1e-9) {
          d = Vec3{1.0 + 0.1 * i, 0.3 * (j + 1), -0.7} * 1e-3;
          n = d.norm();
        }
        f = f + d * (1.0 / (n * n * n));
      }
      force[i] = f;
    }
    const double cap = 0.05 / (1.0 + 3.0 * static_cast<double>(it) / iterations);
    for (int i = 1; i < num_points; ++i) {
      const double fn = force[i].norm();
      if (fn < 1e-12) continue;
      const double mag = std::min(cap, 0.01 * fn);
      Vec3 p = disp.offsets[i] + force[i] * (mag / fn);
      const double pn = p.norm();
      if (pn > 1.0) p = p * (1.0 / pn);
      disp.offsets[i] = p;
    }
  }

  if (disp.min_pairwise_distance() < 0.05)
    throw NumericError("kernel disposition: relaxation left near-coincident points");
  return disp;
}

namespace {

// Precomputed (query, support, kernel point) triples with positive influence,
// shared by forward and backward.
struct KpInfluence {
  std::vector<int> row_begin;  // N+1 offsets into the flat arrays
  std::vector<int> j_index;
  std::vector<int> k_index;
  std::vector<double> h;
};

}  // namespace

Tensor kpconv_forward(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                      const Tensor& feats, const NeighborIndex& neighbors,
                      const Tensor& weights, const KernelDisposition& disp, double radius) {
  const int n = static_cast<int>(queries.size());
  const int m = static_cast<int>(supports.size());
  if (radius <= 0.0) throw DataError("kpconv: radius must be positive");
  if (static_cast<int>(neighbors.neighbors.size()) != n)
    throw std::invalid_argument("kpconv: neighbor lists cover " +
                                std::to_string(neighbors.neighbors.size()) + " queries, expected " +
                                std::to_string(n));
  if (feats.shape().size() != 2 || feats.shape()[0] != m)
    throw std::invalid_argument("kpconv: features " + shape_str(feats.shape()) +
                                " do not match " + std::to_string(m) + " supports");
  if (weights.shape().size() != 3 || weights.shape()[0] != disp.count())
    throw std::invalid_argument("kpconv: weights " + shape_str(weights.shape()) +
                                " do not match " + std::to_string(disp.count()) +
                                " kernel points");
  const int kcount = disp.count();
  const int cin = weights.shape()[1];
  const int cout = weights.shape()[2];
  if (feats.shape()[1] != cin)
    throw std::invalid_argument("kpconv: feature width " + std::to_string(feats.shape()[1]) +
                                " does not match weight input width " + std::to_string(cin));

  auto infl = std::make_shared<KpInfluence>();
  infl->row_begin.assign(static_cast<std::size_t>(n) + 1, 0);
  const double inv_radius = 1.0 / radius;
  const double inv_sigma = 1.0 / disp.sigma;
  for (int i = 0; i < n; ++i) {
    for (int j : neighbors.neighbors[i]) {
      const Vec3 y = (supports[j] - queries[i]) * inv_radius;
      for (int k = 0; k < kcount; ++k) {
        const double hk = 1.0 - dist(y, disp.offsets[k]) * inv_sigma;
        if (hk > 0.0) {
          infl->j_index.push_back(j);
          infl->k_index.push_back(k);
          infl->h.push_back(hk);
        }
      }
    }
    infl->row_begin[i + 1] = static_cast<int>(infl->j_index.size());
  }

  std::vector<double> out(static_cast<std::size_t>(n) * cout, 0.0);
  const auto fv = feats.values();
  const auto wv = weights.values();
  std::vector<double> bucket(static_cast<std::size_t>(kcount) * cin);
  std::vector<char> touched(kcount);
  for (int i = 0; i < n; ++i) {
    std::fill(touched.begin(), touched.end(), 0);
    for (int t = infl->row_begin[i]; t < infl->row_begin[i + 1]; ++t) {
      const int j = infl->j_index[t];
      const int k = infl->k_index[t];
      const double hk = infl->h[t];
      double* bk = &bucket[static_cast<std::size_t>(k) * cin];
      if (!touched[k]) {
        std::fill(bk, bk + cin, 0.0);
        touched[k] = 1;
      }
      const double* frow = &fv[static_cast<std::size_t>(j) * cin];
      for (int c = 0; c < cin; ++c) bk[c] += hk * frow[c];
    }
    double* orow = &out[static_cast<std::size_t>(i) * cout];
    for (int k = 0; k < kcount; ++k) {
      if (!touched[k]) continue;
      const double* bk = &bucket[static_cast<std::size_t>(k) * cin];
      for (int c = 0; c < cin; ++c) {
        const double s = bk[c];
        if (s == 0.0) continue;
        const double* wrow = &wv[(static_cast<std::size_t>(k) * cin + c) * cout];
        for (int o = 0; o < cout; ++o) orow[o] += s * wrow[o];
      }
    }
  }

  return make_op({n, cout}, std::move(out), {feats, weights},
                 [infl, n, kcount, cin, cout](detail::Node& self) {
                   auto& pf = *self.parents[0];
                   auto& pw = *self.parents[1];
                   pf.ensure_grad();
                   pw.ensure_grad();
                   std::vector<double> bucket(static_cast<std::size_t>(kcount) * cin);
                   std::vector<double> back(static_cast<std::size_t>(kcount) * cin);
                   std::vector<char> touched(kcount);
                   for (int i = 0; i < n; ++i) {
                     const double* g = &self.grad[static_cast<std::size_t>(i) * cout];
                     std::fill(touched.begin(), touched.end(), 0);
                     for (int t = infl->row_begin[i]; t < infl->row_begin[i + 1]; ++t) {
                       const int j = infl->j_index[t];
                       const int k = infl->k_index[t];
                       double* bk = &bucket[static_cast<std::size_t>(k) * cin];
                       if (!touched[k]) {
                         std::fill(bk, bk + cin, 0.0);
                         touched[k] = 1;
                       }
                       const double* frow = &pf.values[static_cast<std::size_t>(j) * cin];
                       const double hk = infl->h[t];
                       for (int c = 0; c < cin; ++c) bk[c] += hk * frow[c];
                     }
                     // dW_k += s_k ⊗ g ; back_k = W_k · g
                     for (int k = 0; k < kcount; ++k) {
                       if (!touched[k]) continue;
                       const double* bk = &bucket[static_cast<std::size_t>(k) * cin];
                       double* tk = &back[static_cast<std::size_t>(k) * cin];
                       for (int c = 0; c < cin; ++c) {
                         const std::size_t w0 = (static_cast<std::size_t>(k) * cin + c) * cout;
                         double acc = 0.0;
                         const double s = bk[c];
                         for (int o = 0; o < cout; ++o) {
                           pw.grad[w0 + o] += s * g[o];
                           acc += pw.values[w0 + o] * g[o];
                         }
                         tk[c] = acc;
                       }
                     }
                     for (int t = infl->row_begin[i]; t < infl->row_begin[i + 1]; ++t) {
                       const int j = infl->j_index[t];
                       const double* tk = &back[static_cast<std::size_t>(infl->k_index[t]) * cin];
                       double* gf = &pf.grad[static_cast<std::size_t>(j) * cin];
                       const double hk = infl->h[t];
                       for (int c = 0; c < cin; ++c) gf[c] += hk * tk[c];
                     }
                   }
                 });
}

std::vector<int> nearest_indices(const std::vector<Vec3>& fine, const std::vector<Vec3>& coarse) {
  if (coarse.empty()) throw DataError("nearest upsampling: empty coarse cloud");
  const KdTree tree(coarse);
  std::vector<int> idx(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) idx[i] = tree.nearest(fine[i]);
  return idx;
}

Tensor upsample_nearest(const Tensor& coarse_feats, const std::vector<Vec3>& fine_positions,
                        const std::vector<Vec3>& coarse_positions) {
  if (coarse_feats.shape().size() != 2 ||
      coarse_feats.shape()[0] != static_cast<int>(coarse_positions.size()))
    throw std::invalid_argument("upsample: features " + shape_str(coarse_feats.shape()) +
                                " do not match " + std::to_string(coarse_positions.size()) +
                                " coarse positions");
  return gather_rows(coarse_feats, nearest_indices(fine_positions, coarse_positions));
}

Tensor input_features(const PointCloud& cloud, bool black_indicator) {
  if (cloud.size() < 1) throw DataError("input features: empty cloud");
  if (cloud.colors.size() != cloud.positions.size())
    throw DataError("input features: cloud has no colors");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(cloud.size()) * 4);
  for (const Vec3& c : cloud.colors) {
    v.push_back(c.x);
    v.push_back(c.y);
    v.push_back(c.z);
    if (black_indicator)
      v.push_back((c.x == 0.0 && c.y == 0.0 && c.z == 0.0) ? 1.0 : 0.0);
    else
      v.push_back(1.0);
  }
  return Tensor::from_values({cloud.size(), 4}, std::move(v));
}

std::string LayerPlan::digest_string(const std::string& arch, int input_dim,
                                     int num_classes) const {
  std::ostringstream os;
  os << arch << "|in=" << input_dim << "|classes=" << num_classes << "|cell=" << base_cell
     << "|rf=" << radius_factor << "|K=" << kernel_points << "|sigma=" << sigma_ratio
     << "|cap=" << neighbor_cap << "|w=";
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) os << ",";
    os << widths[i];
  }
  return os.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

CloudPyramid build_pyramid(const std::vector<Vec3>& points, const LayerPlan& plan) {
  if (points.empty()) throw DataError("pyramid: empty point set");
  if (plan.num_levels() < 1) throw DataError("pyramid: plan has no levels");
  if (plan.base_cell <= 0.0) throw DataError("pyramid: base cell must be positive");

  CloudPyramid pyr;
  pyr.levels.resize(plan.num_levels());
  pyr.levels[0].points = points;
  for (int l = 0; l < plan.num_levels(); ++l) {
    LevelGeometry& cur = pyr.levels[l];
    cur.cell = plan.base_cell * static_cast<double>(1 << l);
    cur.conv_radius = plan.radius_factor * cur.cell;
    cur.self_neighbors =
        radius_neighbors(cur.points, cur.points, cur.conv_radius, plan.neighbor_cap);
    if (l + 1 < plan.num_levels()) {
      PointCloud tmp;
      tmp.positions = cur.points;
      tmp.colors.assign(cur.points.size(), Vec3{});
      auto sub = grid_subsample(tmp, plan.base_cell * static_cast<double>(1 << (l + 1)));
      pyr.levels[l + 1].points = sub.cloud.positions;
      cur.pool_map = std::move(sub.pooling_map);
      const double next_radius =
          plan.radius_factor * plan.base_cell * static_cast<double>(1 << (l + 1));
      cur.down_neighbors =
          radius_neighbors(pyr.levels[l + 1].points, cur.points, next_radius, plan.neighbor_cap);
      cur.up_nearest = nearest_indices(cur.points, pyr.levels[l + 1].points);
    }
  }
  pyr.top_to_base_nearest = nearest_indices(pyr.levels[0].points, pyr.levels.back().points);
  return pyr;
}

// --- layers -----------------------------------------------------------------

UnaryConv::UnaryConv(std::string name, int cin, int cout, Rng& rng, bool with_bias,
                     bool zero_init)
    : name_(std::move(name)) {
  weight_ = zero_init ? Tensor::zeros({cin, cout}, true) : kaiming_uniform({cin, cout}, cin, rng);
  if (with_bias) bias_ = Tensor::zeros({1, cout}, true);
}

Tensor UnaryConv::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_bias(y, bias_) : y;
}

void UnaryConv::collect(std::vector<NamedParam>& out) const {
  out.push_back({name_ + ".w", weight_});
  if (bias_.defined()) out.push_back({name_ + ".b", bias_});
}

KPConvLayer::KPConvLayer(std::string name, int cin, int cout, const KernelDisposition& disp,
                         Rng& rng)
    : name_(std::move(name)), disp_(disp) {
  weight_ = kaiming_uniform({disp.count(), cin, cout}, cin * disp.count(), rng);
  bias_ = Tensor::zeros({1, cout}, true);
}

Tensor KPConvLayer::forward(const std::vector<Vec3>& queries, const std::vector<Vec3>& supports,
                            const Tensor& feats, const NeighborIndex& neighbors,
                            double radius) const {
  return add_bias(kpconv_forward(queries, supports, feats, neighbors, weight_, disp_, radius),
                  bias_);
}

void KPConvLayer::collect(std::vector<NamedParam>& out) const {
  out.push_back({name_ + ".w", weight_});
  out.push_back({name_ + ".b", bias_});
}

BottleneckBlock::BottleneckBlock(std::string name, int cin, int cout, bool strided,
                                 const KernelDisposition& disp, Rng& rng)
    : name_(std::move(name)), strided_(strided) {
  const int mid = std::max(1, cout / 4);
  reduce_ = UnaryConv(name_ + ".reduce", cin, mid, rng);
  conv_ = KPConvLayer(name_ + ".conv", mid, mid, disp, rng);
  expand_ = UnaryConv(name_ + ".expand", mid, cout, rng);
  if (cin != cout) shortcut_.emplace(name_ + ".proj", cin, cout, rng);
}

Tensor BottleneckBlock::forward(const CloudPyramid& pyr, int level, const Tensor& x) const {
  const LevelGeometry& cur = pyr.levels[level];
  Tensor h = leaky_relu(reduce_.forward(x), 0.1);
  Tensor conv_out;
  Tensor sc;
  if (!strided_) {
    conv_out = conv_.forward(cur.points, cur.points, h, cur.self_neighbors, cur.conv_radius);
    sc = shortcut_ ? shortcut_->forward(x) : x;
  } else {
    if (level + 1 >= static_cast<int>(pyr.levels.size()))
      throw DataError("strided block at level " + std::to_string(level) +
                      ": pyramid has no coarser level");
    const LevelGeometry& next = pyr.levels[level + 1];
    conv_out =
        conv_.forward(next.points, cur.points, h, cur.down_neighbors, next.conv_radius);
    Tensor pooled = max_over_groups(x, cur.pool_map);
    sc = shortcut_ ? shortcut_->forward(pooled) : pooled;
  }
  Tensor branch = expand_.forward(leaky_relu(conv_out, 0.1));
  return add(branch, sc);
}

void BottleneckBlock::collect(std::vector<NamedParam>& out) const {
  reduce_.collect(out);
  conv_.collect(out);
  expand_.collect(out);
  if (shortcut_) shortcut_->collect(out);
}

// --- networks ---------------------------------------------------------------

ClassificationBackbone::ClassificationBackbone(const LayerPlan& plan, int input_dim,
                                               std::uint64_t init_seed)
    : plan_(plan), input_dim_(input_dim) {
  if (plan.num_levels() != 3)
    throw DataError("classification backbone: plan needs 3 levels, got " +
                    std::to_string(plan.num_levels()));
  disp_ = build_kernel_disposition(plan.kernel_points, derive_seed(init_seed, 0xd15f0ULL),
                                   plan.sigma_ratio);
  Rng rng(derive_seed(init_seed, 0xc1a55ULL));
  const auto& w = plan.widths;
  stem_ = KPConvLayer("stem", input_dim, w[0], disp_, rng);
  blocks_.clear();
  blocks_.push_back(BottleneckBlock("b1", w[0], w[0], false, disp_, rng));
  blocks_.push_back(BottleneckBlock("b2", w[0], w[1], true, disp_, rng));
  blocks_.push_back(BottleneckBlock("b3", w[1], w[1], false, disp_, rng));
  blocks_.push_back(BottleneckBlock("b4", w[1], w[2], true, disp_, rng));
  blocks_.push_back(BottleneckBlock("b5", w[2], w[2], false, disp_, rng));
}

Tensor ClassificationBackbone::forward(const CloudPyramid& pyr, const Tensor& input_feats) const {
  if (static_cast<int>(pyr.levels.size()) != plan_.num_levels())
    throw DataError("classification backbone: pyramid has " +
                    std::to_string(pyr.levels.size()) + " levels, plan has " +
                    std::to_string(plan_.num_levels()));
  if (input_feats.rows() != pyr.level_size(0) || input_feats.cols() != input_dim_)
    throw std::invalid_argument("classification backbone: input features " +
                                shape_str(input_feats.shape()) + " do not match level 0");
  const LevelGeometry& base = pyr.levels[0];
  Tensor h = leaky_relu(
      stem_.forward(base.points, base.points, input_feats, base.self_neighbors, base.conv_radius),
      0.1);
  int level = 0;
  for (const auto& block : blocks_) {
    h = block.forward(pyr, level, h);
    if (block.strided()) ++level;
  }
  return h;
}

std::vector<NamedParam> ClassificationBackbone::params() const {
  std::vector<NamedParam> out;
  stem_.collect(out);
  for (const auto& block : blocks_) block.collect(out);
  return out;
}

SegmentationNet::SegmentationNet(const LayerPlan& plan, int input_dim, int num_classes,
                                 std::uint64_t init_seed)
    : plan_(plan), input_dim_(input_dim), num_classes_(num_classes) {
  if (plan.num_levels() < 2)
    throw DataError("segmentation net: plan needs at least 2 levels, got " +
                    std::to_string(plan.num_levels()));
  if (num_classes < 1) throw DataError("segmentation net: need at least one class");
  disp_ = build_kernel_disposition(plan.kernel_points, derive_seed(init_seed, 0xd15f0ULL),
                                   plan.sigma_ratio);
  Rng rng(derive_seed(init_seed, 0x5e6ULL));
  const auto& w = plan.widths;
  const int levels = plan.num_levels();
  stem_ = KPConvLayer("stem", input_dim, w[0], disp_, rng);
  encoder_.clear();
  for (int b = 0; b + 1 < levels; ++b) {
    std::vector<BottleneckBlock> stage;
    const std::string base = "enc" + std::to_string(b);
    stage.push_back(BottleneckBlock(base + "a", w[b], w[b], false, disp_, rng));
    stage.push_back(BottleneckBlock(base + "b", w[b], w[b], false, disp_, rng));
    stage.push_back(BottleneckBlock(base + "s", w[b], w[b + 1], true, disp_, rng));
    encoder_.push_back(std::move(stage));
  }
  decoder_.clear();
  for (int l = levels - 1; l >= 1; --l)
    decoder_.push_back(
        UnaryConv("dec" + std::to_string(l - 1), w[l] + w[l - 1], w[l - 1], rng));
  head_ = UnaryConv("head", w[0], num_classes, rng);
}

Tensor SegmentationNet::forward(const CloudPyramid& pyr, const Tensor& input_feats) const {
  const int levels = plan_.num_levels();
  if (static_cast<int>(pyr.levels.size()) != levels)
    throw DataError("segmentation net: pyramid has " + std::to_string(pyr.levels.size()) +
                    " levels, plan has " + std::to_string(levels));
  if (input_feats.rows() != pyr.level_size(0) || input_feats.cols() != input_dim_)
    throw std::invalid_argument("segmentation net: input features " +
                                shape_str(input_feats.shape()) + " do not match level 0");
  const LevelGeometry& base = pyr.levels[0];
  Tensor h = leaky_relu(
      stem_.forward(base.points, base.points, input_feats, base.self_neighbors, base.conv_radius),
      0.1);
  std::vector<Tensor> skips(levels);
  for (int b = 0; b + 1 < levels; ++b) {
    h = encoder_[b][0].forward(pyr, b, h);
    h = encoder_[b][1].forward(pyr, b, h);
    skips[b] = h;
    h = encoder_[b][2].forward(pyr, b, h);
  }
  for (int l = levels - 1; l >= 1; --l) {
    Tensor up = gather_rows(h, pyr.levels[l - 1].up_nearest);
    Tensor cat = concat_cols(up, skips[l - 1]);
    h = leaky_relu(decoder_[levels - 1 - l].forward(cat), 0.1);
  }
  return head_.forward(h);
}

std::vector<NamedParam> SegmentationNet::params() const {
  std::vector<NamedParam> out;
  stem_.collect(out);
  for (const auto& stage : encoder_)
    for (const auto& block : stage) block.collect(out);
  for (const auto& dec : decoder_) dec.collect(out);
  head_.collect(out);
  return out;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[9] = "WPCKPT01";

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint truncated: " + path);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, std::uint64_t plan_digest,
                     const std::vector<NamedParam>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  write_pod<std::uint64_t>(out, plan_digest);
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.tensor.shape();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) write_pod<std::int32_t>(out, d);
    const auto vals = p.tensor.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, std::uint64_t plan_digest,
                     std::vector<NamedParam>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto digest = read_pod<std::uint64_t>(in, path);
  if (digest != plan_digest)
    throw DataError("checkpoint " + path + " was written for a different layer plan");
  const auto count = read_pod<std::uint64_t>(in, path);
  if (count != params.size())
    throw DataError("checkpoint " + path + " holds " + std::to_string(count) +
                    " parameters, model has " + std::to_string(params.size()));
  for (auto& p : params) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw DataError("checkpoint truncated: " + path);
    if (name != p.name)
      throw DataError("checkpoint " + path + ": parameter '" + name + "' where '" + p.name +
                      "' was expected");
    const auto ndim = read_pod<std::uint32_t>(in, path);
    Shape shape(ndim);
    for (auto& d : shape) d = read_pod<std::int32_t>(in, path);
    if (shape != p.tensor.shape())
      throw DataError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                      shape_str(shape) + ", model expects " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.values_mut();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint truncated: " + path);
  }
}

}  // namespace wp
