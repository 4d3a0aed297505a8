#include "wp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace wp {

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values,
                                       bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_size(shape))
    throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a 2-d tensor, got " +
                                shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

double sigmoid_stable(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::constant(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({1, 1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::rows() const {
  require_2d(*this, "rows");
  return node_->shape[0];
}

int Tensor::cols() const {
  require_2d(*this, "cols");
  return node_->shape[1];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(node_->values.size()); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::values_mut() { return node_->values; }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::at(int r, int c) const {
  require_2d(*this, "at");
  return node_->values[static_cast<std::size_t>(r) * node_->shape[1] + c];
}

double Tensor::scalar_value() const {
  if (size() != 1)
    throw std::invalid_argument("scalar_value: tensor has " + std::to_string(size()) +
                                " elements");
  return node_->values[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

namespace {

// Iterative post-order DFS; returns nodes so that parents appear before
// children are popped in reverse.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  if (size() != 1)
    throw std::invalid_argument("backward: expected a scalar root, got " + shape_str(shape()));
  auto order = topo_order(node_.get());
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void zero_grads_reachable(const Tensor& root) {
  for (detail::Node* n : topo_order(root.node()))
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  auto n = new_node(std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.handle());
    n->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(n));
}

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int n = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], m = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[static_cast<std::size_t>(p) * m];
      double* orow = &out[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  return make_op({n, m}, std::move(out), {a, b}, [n, k, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    // dL/da = g . b^T ; dL/db = a^T . g
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const double g = self.grad[static_cast<std::size_t>(i) * m + j];
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          pa.grad[static_cast<std::size_t>(i) * k + p] +=
              g * pb.values[static_cast<std::size_t>(p) * m + j];
          pb.grad[static_cast<std::size_t>(p) * m + j] +=
              g * pa.values[static_cast<std::size_t>(i) * k + p];
        }
      }
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  const int r = a.shape()[0], c = a.shape()[1];
  const auto av = a.values();
  for (double v : av)
    if (!std::isfinite(v)) throw NumericError("softmax_rows: non-finite input");
  std::vector<double> out(av.begin(), av.end());
  for (int i = 0; i < r; ++i) {
    double* row = &out[static_cast<std::size_t>(i) * c];
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= sum;
  }
  std::vector<double> y = out;
  return make_op({r, c}, std::move(out), {a}, [r, c, y = std::move(y)](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* yr = &y[static_cast<std::size_t>(i) * c];
      const double* gr = &self.grad[static_cast<std::size_t>(i) * c];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
      for (int j = 0; j < c; ++j)
        pa.grad[static_cast<std::size_t>(i) * c + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets) {
  require_2d(logits, "sigmoid_bce");
  require_same_shape(logits, targets, "sigmoid_bce");
  const auto zv = logits.values();
  const auto tv = targets.values();
  for (double t : tv)
    if (t != 0.0 && t != 1.0)
      throw std::invalid_argument("sigmoid_bce: targets must be 0 or 1, got " +
                                  std::to_string(t));
  const std::size_t count = zv.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double z = zv[i], t = tv[i];
    // -[t log s(z) + (1-t) log(1-s(z))] in log-sum-exp form
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(count);
  std::vector<double> tcopy(tv.begin(), tv.end());
  return make_op({1, 1}, {loss}, {logits, targets},
                 [count, tcopy = std::move(tcopy)](detail::Node& self) {
                   auto& pz = *self.parents[0];
                   pz.ensure_grad();
                   const double g = self.grad[0] / static_cast<double>(count);
                   for (std::size_t i = 0; i < count; ++i)
                     pz.grad[i] += g * (sigmoid_stable(pz.values[i]) - tcopy[i]);
                 });
}

Tensor global_average_pool(const Tensor& a) {
  require_2d(a, "global_average_pool");
  const int n = a.shape()[0], c = a.shape()[1];
  if (n < 1) throw std::invalid_argument("global_average_pool: empty input");
  std::vector<double> out(c, 0.0);
  const auto av = a.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[j] += av[static_cast<std::size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) out[j] /= n;
  return make_op({1, c}, std::move(out), {a}, [n, c](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (int j = 0; j < c; ++j) {
      const double g = self.grad[j] / n;
      for (int i = 0; i < n; ++i) pa.grad[static_cast<std::size_t>(i) * c + j] += g;
    }
  });
}

Tensor dropout(const Tensor& a, double rate, bool training, std::uint64_t rng_seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const std::size_t n = static_cast<std::size_t>(a.size());
  Rng rng(rng_seed);
  std::vector<std::uint8_t> keep(n);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> out(n);
  const auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = uniform(rng, 0.0, 1.0) >= rate ? 1 : 0;
    out[i] = keep[i] ? av[i] * inv : 0.0;
  }
  return make_op(a.shape(), std::move(out), {a},
                 [keep = std::move(keep), inv](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < keep.size(); ++i)
                     if (keep[i]) pa.grad[i] += self.grad[i] * inv;
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * pb.values[i];
      pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * factor;
  });
}

Tensor scale_by(const Tensor& s, const Tensor& a) {
  if (s.size() != 1) throw std::invalid_argument("scale_by: scale must have one element");
  const double sv = s.values()[0];
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * av[i];
  return make_op(a.shape(), std::move(out), {s, a}, [](detail::Node& self) {
    auto& ps = *self.parents[0];
    auto& pa = *self.parents[1];
    ps.ensure_grad();
    pa.ensure_grad();
    const double sv = ps.values[0];
    double gs = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gs += self.grad[i] * pa.values[i];
      pa.grad[i] += self.grad[i] * sv;
    }
    ps.grad[0] += gs;
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int r = a.shape()[0], c = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(j) * r + i] = av[static_cast<std::size_t>(i) * c + j];
  return make_op({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa.grad[static_cast<std::size_t>(i) * c + j] +=
            self.grad[static_cast<std::size_t>(j) * r + i];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  if (b.shape()[0] != n)
    throw std::invalid_argument("concat_cols: row counts differ, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * (ca + cb));
  const auto av = a.values();
  const auto bv = b.values();
  for (int i = 0; i < n; ++i) {
    std::copy_n(&av[static_cast<std::size_t>(i) * ca], ca,
                &out[static_cast<std::size_t>(i) * (ca + cb)]);
    std::copy_n(&bv[static_cast<std::size_t>(i) * cb], cb,
                &out[static_cast<std::size_t>(i) * (ca + cb) + ca]);
  }
  return make_op({n, ca + cb}, std::move(out), {a, b}, [n, ca, cb](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* g = &self.grad[static_cast<std::size_t>(i) * (ca + cb)];
      for (int j = 0; j < ca; ++j) pa.grad[static_cast<std::size_t>(i) * ca + j] += g[j];
      for (int j = 0; j < cb; ++j) pb.grad[static_cast<std::size_t>(i) * cb + j] += g[ca + j];
    }
  });
}

Tensor elementwise_max(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_max");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  std::vector<std::uint8_t> first_wins(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // ties route to the first operand
    first_wins[i] = av[i] >= bv[i] ? 1 : 0;
    out[i] = first_wins[i] ? av[i] : bv[i];
  }
  return make_op(a.shape(), std::move(out), {a, b},
                 [first_wins = std::move(first_wins)](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   pa.ensure_grad();
                   pb.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     if (first_wins[i])
                       pa.grad[i] += self.grad[i];
                     else
                       pb.grad[i] += self.grad[i];
                   }
                 });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] >= 0.0 ? av[i] : av[i] * negative_slope;
  return make_op(a.shape(), std::move(out), {a}, [negative_slope](detail::Node& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * (pa.values[i] >= 0.0 ? 1.0 : negative_slope);
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_bias");
  require_2d(bias, "add_bias");
  const int n = a.shape()[0], c = a.shape()[1];
  if (bias.shape()[0] != 1 || bias.shape()[1] != c)
    throw std::invalid_argument("add_bias: bias shape " + shape_str(bias.shape()) +
                                " does not broadcast over " + shape_str(a.shape()));
  const auto av = a.values();
  const auto bv = bias.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i) * c + j] = av[static_cast<std::size_t>(i) * c + j] + bv[j];
  return make_op({n, c}, std::move(out), {a, bias}, [n, c](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    pa.ensure_grad();
    pb.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        const double g = self.grad[static_cast<std::size_t>(i) * c + j];
        pa.grad[static_cast<std::size_t>(i) * c + j] += g;
        pb.grad[j] += g;
      }
  });
}

Tensor gather_rows(const Tensor& a, std::vector<int> indices) {
  require_2d(a, "gather_rows");
  const int m = a.shape()[0], c = a.shape()[1];
  for (int idx : indices)
    if (idx < 0 || idx >= m)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range for " + std::to_string(m) + " rows");
  const int n = static_cast<int>(indices.size());
  std::vector<double> out(static_cast<std::size_t>(n) * c);
  const auto av = a.values();
  for (int i = 0; i < n; ++i)
    std::copy_n(&av[static_cast<std::size_t>(indices[i]) * c], c,
                &out[static_cast<std::size_t>(i) * c]);
  return make_op({n, c}, std::move(out), {a},
                 [c, indices = std::move(indices)](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   pa.ensure_grad();
                   for (std::size_t i = 0; i < indices.size(); ++i)
                     for (int j = 0; j < c; ++j)
                       pa.grad[static_cast<std::size_t>(indices[i]) * c + j] +=
                           self.grad[i * c + j];
                 });
}

Tensor max_over_groups(const Tensor& a, const std::vector<std::vector<int>>& groups) {
  require_2d(a, "max_over_groups");
  const int m = a.shape()[0], c = a.shape()[1];
  const int g = static_cast<int>(groups.size());
  const auto av = a.values();
  std::vector<double> out(static_cast<std::size_t>(g) * c, 0.0);
  std::vector<int> winners(static_cast<std::size_t>(g) * c, -1);
  for (int gi = 0; gi < g; ++gi) {
    for (int member : groups[gi]) {
      if (member < 0 || member >= m)
        throw std::invalid_argument("max_over_groups: member index " + std::to_string(member) +
                                    " out of range for " + std::to_string(m) + " rows");
      for (int j = 0; j < c; ++j) {
        const double v = av[static_cast<std::size_t>(member) * c + j];
        const std::size_t o = static_cast<std::size_t>(gi) * c + j;
        if (winners[o] < 0 || v > out[o]) {
          out[o] = v;
          winners[o] = member;
        }
      }
    }
  }
  for (std::size_t o = 0; o < out.size(); ++o)
    if (winners[o] < 0) out[o] = 0.0;
  return make_op({g, c}, std::move(out), {a},
                 [c, winners = std::move(winners)](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   pa.ensure_grad();
                   for (std::size_t o = 0; o < winners.size(); ++o)
                     if (winners[o] >= 0)
                       pa.grad[static_cast<std::size_t>(winners[o]) * c + o % c] += self.grad[o];
                 });
}

Tensor softmax_xent_rows(const Tensor& logits, const std::vector<int>& labels) {
  require_2d(logits, "softmax_xent_rows");
  const int n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("softmax_xent_rows: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  int valid = 0;
  for (int l : labels) {
    if (l >= c)
      throw std::invalid_argument("softmax_xent_rows: label " + std::to_string(l) +
                                  " out of range for " + std::to_string(c) + " classes");
    if (l >= 0) ++valid;
  }
  if (valid == 0) throw std::invalid_argument("softmax_xent_rows: no labeled rows");
  const auto zv = logits.values();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    const double* row = &zv[static_cast<std::size_t>(i) * c];
    const double mx = *std::max_element(row, row + c);
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
    loss += mx + std::log(lse) - row[labels[i]];
  }
  loss /= valid;
  return make_op({1, 1}, {loss}, {logits}, [n, c, valid, labels](detail::Node& self) {
    auto& pz = *self.parents[0];
    pz.ensure_grad();
    const double g = self.grad[0] / valid;
    for (int i = 0; i < n; ++i) {
      if (labels[i] < 0) continue;
      const double* row = &pz.values[static_cast<std::size_t>(i) * c];
      const double mx = *std::max_element(row, row + c);
      double sum = 0.0;
      for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
      for (int j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - mx) / sum;
        pz.grad[static_cast<std::size_t>(i) * c + j] +=
            g * (p - (j == labels[i] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor kaiming_uniform(Shape shape, int fan_in, Rng& rng, bool requires_grad) {
  if (fan_in < 1) throw std::invalid_argument("kaiming_uniform: fan_in must be positive");
  // gain for leaky-relu with slope 0.1
  const double gain = std::sqrt(2.0 / (1.0 + 0.1 * 0.1));
  const double bound = gain * std::sqrt(3.0 / fan_in);
  return uniform_init(std::move(shape), bound, rng, requires_grad);
}

Tensor uniform_init(Shape shape, double bound, Rng& rng, bool requires_grad) {
  const auto n = shape_size(shape);
  std::vector<double> values(n);
  for (auto& v : values) v = uniform(rng, -bound, bound);
  return Tensor::from_values(std::move(shape), std::move(values), requires_grad);
}

}  // namespace wp
