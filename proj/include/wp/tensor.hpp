#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wp/common.hpp"

namespace wp {

using Shape = std::vector<int>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the backward graph. Values are written once by the producing
// op; grad is allocated lazily on first accumulation.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void accum(std::size_t i, double g) {
    ensure_grad();
    grad[i] += g;
  }
};

}  // namespace detail

// Shared handle to a graph node. Cheap to copy; the values of a node are
// immutable once a downstream op has consumed them (mutation is reserved for
// parameter updates between training steps).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rows() const;
  int cols() const;
  std::int64_t size() const;
  bool requires_grad() const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  double at(int r, int c) const;
  double scalar_value() const;

  void zero_grad();
  // Reverse sweep from a 1-element tensor; every reachable node is visited
  // exactly once, gradients accumulate with +=.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Zero the grad buffers of every node reachable from root.
void zero_grads_reachable(const Tensor& root);

// Builds an op node. Parents and the backward closure are dropped when no
// parent requires grad, detaching constant subgraphs from the tape.
Tensor make_op(Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

// --- primitive ops ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a);
Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets);
Tensor global_average_pool(const Tensor& a);
Tensor dropout(const Tensor& a, double rate, bool training, std::uint64_t rng_seed);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// out = s * a with a learnable 1-element scale s.
Tensor scale_by(const Tensor& s, const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor elementwise_max(const Tensor& a, const Tensor& b);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor gather_rows(const Tensor& a, std::vector<int> indices);
// Per-group per-column max pool; empty groups yield zero rows and receive no
// gradient. Ties route to the lowest member index.
Tensor max_over_groups(const Tensor& a, const std::vector<std::vector<int>>& groups);
// Mean over rows with label >= 0 of (logsumexp(row) - row[label]); label -1 rows
// are ignored.
Tensor softmax_xent_rows(const Tensor& logits, const std::vector<int>& labels);

// --- parameter initialization ----------------------------------------------

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng, bool requires_grad = true);
Tensor uniform_init(Shape shape, double bound, Rng& rng, bool requires_grad = true);

}  // namespace wp
