#include "wp/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wp {

namespace {

constexpr double kMaskedPenalty = 1e4;

std::vector<double> unary_potentials(const Tensor& scores, const WeakLabel& weak) {
  const int n = scores.rows();
  const int classes = scores.cols();
  std::vector<double> u(static_cast<std::size_t>(n) * classes, kMaskedPenalty);
  const auto sv = scores.values();
  for (int i = 0; i < n; ++i) {
    const double* row = &sv[static_cast<std::size_t>(i) * classes];
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c)
      if (weak[c]) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c)
      if (weak[c]) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    for (int c = 0; c < classes; ++c)
      if (weak[c]) u[static_cast<std::size_t>(i) * classes + c] = lse - row[c];
  }
  return u;
}

// Q row from negated potentials z (stabilized); writes into dst.
void softmax_neg_row(const double* u, int classes, double* dst) {
  double mn = u[0];
  for (int c = 1; c < classes; ++c) mn = std::min(mn, u[c]);
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    dst[c] = std::exp(mn - u[c]);
    sum += dst[c];
  }
  for (int c = 0; c < classes; ++c) dst[c] /= sum;
}

}  // namespace

void CrfConfig::validate() const {
  if (bilateral_weight < 0.0 || smooth_weight < 0.0)
    throw DataError("pairwise refinement: kernel weights must be nonnegative");
  if (position_bandwidth <= 0.0 || color_bandwidth <= 0.0 || smooth_bandwidth <= 0.0)
    throw DataError("pairwise refinement: bandwidths must be positive");
  if (iterations < 0) throw DataError("pairwise refinement: iteration count is negative");
  if (max_points < 1) throw DataError("pairwise refinement: point budget must be positive");
}

double crf_kernel(const Vec3& pos_i, const Vec3& pos_j, const Vec3& col_i, const Vec3& col_j,
                  const CrfConfig& config) {
  const double dp2 = dist2(pos_i, pos_j);
  const double dc2 = dist2(col_i, col_j);
  const double a = config.position_bandwidth;
  const double b = config.color_bandwidth;
  const double g = config.smooth_bandwidth;
  return config.bilateral_weight * std::exp(-dp2 / (2.0 * a * a) - dc2 / (2.0 * b * b)) +
         config.smooth_weight * std::exp(-dp2 / (2.0 * g * g));
}

PseudoLabel crf_refine(const PointCloud& cloud, const ScoreMap& unary_scores,
                       const WeakLabel& weak, const CrfConfig& config,
                       std::vector<MarginalField>* trace) {
  config.validate();
  const int n = cloud.size();
  const int classes = unary_scores.scores.cols();
  if (n < 1) throw DataError("pairwise refinement: empty cloud");
  if (unary_scores.scores.rows() != n)
    throw DataError("pairwise refinement: score rows " +
                    std::to_string(unary_scores.scores.rows()) + " do not match " +
                    std::to_string(n) + " points");
  if (cloud.colors.size() != cloud.positions.size())
    throw DataError("pairwise refinement: cloud has no colors");
  if (static_cast<int>(weak.size()) != classes)
    throw DataError("pairwise refinement: weak label width does not match the score map");
  if (weak_label_empty(weak))
    throw DataError("pairwise refinement: weak label has no positive class");
  if (n > config.max_points)
    throw DataError("pairwise refinement: " + std::to_string(n) + " points exceed the budget of " +
                    std::to_string(config.max_points));
  for (double v : unary_scores.scores.values())
    if (!std::isfinite(v)) throw NumericError("pairwise refinement: non-finite unary score");

  const std::vector<double> u = unary_potentials(unary_scores.scores, weak);

  MarginalField field;
  field.num_classes = classes;
  field.q.resize(static_cast<std::size_t>(n) * classes);
  for (int i = 0; i < n; ++i)
    softmax_neg_row(&u[static_cast<std::size_t>(i) * classes], classes,
                    &field.q[static_cast<std::size_t>(i) * classes]);
  if (trace) {
    trace->clear();
    trace->push_back(field);
  }

  // cache the full kernel matrix when it fits comfortably
  const bool cache = static_cast<std::int64_t>(n) * n <= 4000LL * 4000LL;
  std::vector<double> kmat;
  if (cache) {
    kmat.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        kmat[static_cast<std::size_t>(i) * n + j] =
            crf_kernel(cloud.positions[i], cloud.positions[j], cloud.colors[i], cloud.colors[j],
                       config);
      }
  }

  MarginalField next = field;
  std::vector<double> message(classes);
  for (int it = 0; it < config.iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      std::fill(message.begin(), message.end(), 0.0);
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double k = cache ? kmat[static_cast<std::size_t>(i) * n + j]
                               : crf_kernel(cloud.positions[i], cloud.positions[j],
                                            cloud.colors[i], cloud.colors[j], config);
        if (k == 0.0) continue;
        const double* qj = &field.q[static_cast<std::size_t>(j) * classes];
        for (int l = 0; l < classes; ++l) message[l] += k * qj[l];
      }
      double msum = 0.0;
      for (int l = 0; l < classes; ++l) msum += message[l];
      // z(l) = u(l) + sum_{l' != l} message(l'), then Q ∝ exp(-z)
      double* dst = &next.q[static_cast<std::size_t>(i) * classes];
      const double* ui = &u[static_cast<std::size_t>(i) * classes];
      for (int l = 0; l < classes; ++l) dst[l] = ui[l] + (msum - message[l]);
      softmax_neg_row(dst, classes, dst);
    }
    field.q.swap(next.q);
    if (trace) trace->push_back(field);
  }

  PseudoLabel out;
  out.labels.resize(n);
  out.scores.resize(n);
  for (int i = 0; i < n; ++i) {
    const double* qi = &field.q[static_cast<std::size_t>(i) * classes];
    int best = -1;
    double bs = -std::numeric_limits<double>::infinity();
    for (int l = 0; l < classes; ++l) {
      if (!weak[l]) continue;
      if (qi[l] > bs) {
        bs = qi[l];
        best = l;
      }
    }
    out.labels[i] = best;
    out.scores[i] = bs;
  }
  return out;
}

}  // namespace wp
