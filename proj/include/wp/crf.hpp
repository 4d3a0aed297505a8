#pragma once

#include <vector>

#include "wp/cloud.hpp"
#include "wp/mprm.hpp"

namespace wp {

// Pairwise refinement settings: a bilateral kernel over position and color
// plus a position-only smoothness kernel, Potts compatibility, synchronous
// mean-field updates.
struct CrfConfig {
  double bilateral_weight = 10.0;   // w1
  double position_bandwidth = 0.5;  // meters
  double color_bandwidth = 0.1;     // colors live in [0,1]
  double smooth_weight = 3.0;       // w2
  double smooth_bandwidth = 0.1;    // meters
  int iterations = 10;
  int max_points = 20000;  // exact O(N^2) message passing budget

  void validate() const;
};

struct MarginalField {
  std::vector<double> q;  // N x num_classes, rows sum to 1
  int num_classes = 0;

  int rows() const {
    return num_classes == 0 ? 0 : static_cast<int>(q.size()) / num_classes;
  }
  double at(int i, int l) const { return q[static_cast<std::size_t>(i) * num_classes + l]; }
};

double crf_kernel(const Vec3& pos_i, const Vec3& pos_j, const Vec3& col_i, const Vec3& col_j,
                  const CrfConfig& config);

// Unary potentials are -log softmax of the scores over the weak label's
// positive classes; masked classes carry a large finite penalty. When trace
// is given it receives the initial field plus one field per iteration.
PseudoLabel crf_refine(const PointCloud& cloud, const ScoreMap& unary_scores,
                       const WeakLabel& weak, const CrfConfig& config,
                       std::vector<MarginalField>* trace = nullptr);

}  // namespace wp
