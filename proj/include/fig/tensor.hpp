#pragma once

// Dense row-major double tensors with a dynamically recorded reverse-mode tape.
//
// Every tensor is a handle to a shared node. Operations on tensors that require
// gradients record a closure on the result node; backward() orders the reachable
// nodes topologically (the Tape) and replays the closures in reverse.
//
// Only rank 0, 1 and 2 are supported. A rank-1 tensor of extent n behaves as a
// 1 x n row wherever a matrix is expected.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fig/errors.hpp"

namespace fig {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Adds this node's grad into the grads of `inputs`.
  std::function<void(Node&)> backward;

  std::size_t rows() const {
    return shape.size() == 2 ? shape[0] : 1;
  }
  std::size_t cols() const {
    if (shape.empty()) return 1;
    return shape.size() == 1 ? shape[0] : shape[1];
  }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) { node_->value.assign(1, 0.0); }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.size() > 2) throw DimensionError("tensor rank > 2 unsupported: " + shape_str(shape));
    if (shape_size(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor filled(Shape shape, double v) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> data, bool requires_grad = false) {
    return Tensor({r, c}, std::move(data), requires_grad);
  }
  static Tensor vector(std::vector<double> data, bool requires_grad = false) {
    auto n = data.size();
    return Tensor({n}, std::move(data), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // In-place access for leaves (parameter updates, finite differences).
  std::span<double> mutable_data() { return node_->value; }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  /// Same values, no history, no gradient.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds a result node; the backward closure is kept only when some input needs it.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    auto& n = *out.node();
    n.requires_grad = true;
    for (auto& t : inputs) n.inputs.push_back(t.node());
    n.backward = std::move(backward);
  }
  return out;
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() > 2) throw DimensionError(std::string(op) + ": rank > 2");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape

/// Topologically ordered record of the operations that produced a tensor.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS; inputs visited in declaration order.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    auto* r = root.node().get();
    if (!r->requires_grad) return tape;
    stack.emplace_back(r, 0);
    seen.insert(r);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        auto* child = node->inputs[next++].get();
        if (child->requires_grad && !seen.contains(child)) {
          seen.insert(child);
          stack.emplace_back(child, 0);
        }
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  /// Producers first; the root is last.
  std::span<detail::Node* const> ops() const { return order_; }
  std::size_t size() const { return order_.size(); }

  void replay_adjoints() const {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      auto* n = *it;
      if (!n->backward) continue;
      n->ensure_grad();
      for (auto& in : n->inputs)
        if (in->requires_grad) in->ensure_grad();
      n->backward(*n);
    }
  }

 private:
  std::vector<detail::Node*> order_;
};

/// Populates grad on every requires_grad tensor reachable from a scalar loss.
/// Leaf grads accumulate; call zero_grad() between steps.
inline void backward(const Tensor& loss) {
  auto& n = *loss.node();
  if (loss.size() != 1) throw AutodiffError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!n.requires_grad) throw AutodiffError("backward: loss is detached from every parameter");
  if (n.backward_done) throw AutodiffError("backward: called twice on the same loss");
  auto tape = Tape::record(loss);
  for (auto* node : tape.ops())
    if (node->backward) node->grad.assign(node->value.size(), 0.0);
  n.ensure_grad()[0] += 1.0;
  tape.replay_adjoints();
  n.backward_done = true;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = A[i * k + p];
      const double* br = B + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* g = self.grad.data();
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      // ga += g * b^T, written as row updates over b^T so the inner loop is contiguous.
      double* ga = an.grad.data();
      const double* B = bn.value.data();
      std::vector<double> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          const double* br = bt.data() + j * k;
          double* o = ga + i * k;
          for (std::size_t p = 0; p < k; ++p) o[p] += s * br[p];
        }
    }
    if (bn.requires_grad) {
      double* gb = bn.grad.data();
      const double* A = an.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = A[i * k + p];
          const double* gr = g + i * n;
          double* o = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) o[j] += s * gr[j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[j * r + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  std::vector<double> v(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(v), {a}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
  });
}

/// Blocks gradient flow; the straight-through composition relies on it.
inline Tensor detach(const Tensor& a) { return a.detach(); }

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

enum class Bcast { full, row, scalar };

struct BinaryPlan {
  Shape shape;
  Bcast a = Bcast::full, b = Bcast::full;
  std::size_t cols = 1;
};

inline bool is_row_of(const Tensor& v, const Tensor& m) {
  return (v.rank() == 1 || (v.rank() == 2 && v.rows() == 1)) && v.cols() == m.cols() && m.rank() == 2;
}

inline BinaryPlan plan_binary(const Tensor& a, const Tensor& b, const char* op) {
  BinaryPlan p;
  if (a.shape() == b.shape()) {
    p.shape = a.shape();
  } else if (b.size() == 1) {
    p.shape = a.shape();
    p.b = Bcast::scalar;
  } else if (a.size() == 1) {
    p.shape = b.shape();
    p.a = Bcast::scalar;
  } else if (is_row_of(b, a)) {
    p.shape = a.shape();
    p.b = Bcast::row;
  } else if (is_row_of(a, b)) {
    p.shape = b.shape();
    p.a = Bcast::row;
  } else {
    throw DimensionError(std::string(op) + ": shapes not broadcastable, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  p.cols = p.shape.empty() ? 1 : p.shape.back();
  if (p.cols == 0) p.cols = 1;
  return p;
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Bcast::full: return i;
    case Bcast::row: return i % cols;
    case Bcast::scalar: return 0;
  }
  return i;
}

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd f, DA da, DB db) {
  auto p = plan_binary(a, b, op);
  const std::size_t n = shape_size(p.shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[bidx(p.a, i, p.cols)], b[bidx(p.b, i, p.cols)]);
  return make_result(p.shape, std::move(out), {a, b}, [p, n, da, db](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = bidx(p.a, i, p.cols), ib = bidx(p.b, i, p.cols);
      const double x = an.value[ia], y = bn.value[ib], g = self.grad[i];
      if (an.requires_grad) an.grad[ia] += g * da(x, y);
      if (bn.requires_grad) bn.grad[ib] += g * db(x, y);
    }
  });
}

template <class Fwd, class D>
Tensor unary(const Tensor& a, Fwd f, D d) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i]);
  return make_result(a.shape(), std::move(out), {a}, [n, d](Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < n; ++i) in.grad[i] += self.grad[i] * d(in.value[i], self.value[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Branch anchoring

/// Discrete branches taken by piecewise operations (ReLU masks, top-K choices).
/// A first pass records them in call order; replay passes reuse them, so the
/// replayed function is smooth near the recording point and its exact gradient
/// there is the one backward() computes. Active on the current thread while a
/// BranchAnchorScope holds it.
class BranchAnchors {
 public:
  bool replaying() const { return replay_; }
  void start_replay() {
    replay_ = true;
    cursor_ = 0;
  }
  void rewind() { cursor_ = 0; }
  std::size_t size() const { return entries_.size(); }

  /// Records `taken`, or returns the recorded entry at the cursor when replaying.
  std::vector<double> branch(std::vector<double> taken) {
    if (!replay_) {
      entries_.push_back(taken);
      return taken;
    }
    if (cursor_ >= entries_.size()) throw AutodiffError("branch replay ran past the recording");
    const auto& e = entries_[cursor_++];
    if (e.size() != taken.size()) throw AutodiffError("branch replay does not match the recorded call");
    return e;
  }

 private:
  std::vector<std::vector<double>> entries_;
  std::size_t cursor_ = 0;
  bool replay_ = false;
};

namespace detail {
inline thread_local BranchAnchors* active_anchors = nullptr;
}

inline BranchAnchors* active_branch_anchors() { return detail::active_anchors; }

class BranchAnchorScope {
 public:
  explicit BranchAnchorScope(BranchAnchors& a) : prev_(detail::active_anchors) { detail::active_anchors = &a; }
  ~BranchAnchorScope() { detail::active_anchors = prev_; }
  BranchAnchorScope(const BranchAnchorScope&) = delete;
  BranchAnchorScope& operator=(const BranchAnchorScope&) = delete;

 private:
  BranchAnchors* prev_;
};

inline Tensor relu(const Tensor& a) {
  auto* anchors = active_branch_anchors();
  if (!anchors)
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  std::vector<double> mask(a.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = a[i] > 0.0 ? 1.0 : 0.0;
  mask = anchors->branch(std::move(mask));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  return detail::make_result(a.shape(), std::move(out), {a}, [mask](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < mask.size(); ++i) in.grad[i] += self.grad[i] * mask[i];
  });
}

enum class ElementwiseKind { sigmoid, relu, add, mul, sub };

/// Dispatcher over the elementwise primitives; `b` is ignored for unary kinds.
inline Tensor elementwise(const Tensor& a, ElementwiseKind kind, const Tensor& b = Tensor()) {
  switch (kind) {
    case ElementwiseKind::sigmoid: return sigmoid(a);
    case ElementwiseKind::relu: return relu(a);
    case ElementwiseKind::add: return add(a, b);
    case ElementwiseKind::mul: return mul(a, b);
    case ElementwiseKind::sub: return sub(a, b);
  }
  throw ArgumentError("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// Row-wise softmax and reductions

inline Tensor softmax_rows(const Tensor& a) {
  detail::require_matrix(a, "softmax_rows");
  const std::size_t r = a.rows(), c = a.cols();
  if (c == 0) throw DimensionError("softmax_rows: empty row dimension");
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = a.data().data() + i * c;
    double* y = out.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.data() + i * c;
      const double* g = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

enum class ReduceKind { mean_rows, sum_rows, sum_all };

inline Tensor reduce(const Tensor& a, ReduceKind kind) {
  detail::require_matrix(a, "reduce");
  if (a.size() == 0) throw DimensionError("reduce: empty input " + shape_str(a.shape()));
  const std::size_t r = a.rows(), c = a.cols();
  if (kind == ReduceKind::sum_all) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result({}, {s}, {a}, [](detail::Node& self) {
      auto& in = *self.inputs[0];
      for (auto& g : in.grad) g += self.grad[0];
    });
  }
  const double w = kind == ReduceKind::mean_rows ? 1.0 / static_cast<double>(r) : 1.0;
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a[i * c + j];
  for (auto& v : out) v *= w;
  return detail::make_result({c}, std::move(out), {a}, [r, c, w](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += w * self.grad[j];
  });
}

inline Tensor sum_all(const Tensor& a) { return reduce(a, ReduceKind::sum_all); }
inline Tensor mean_rows(const Tensor& a) { return reduce(a, ReduceKind::mean_rows); }
inline Tensor sum_rows(const Tensor& a) { return reduce(a, ReduceKind::sum_rows); }

// ---------------------------------------------------------------------------
// Row/column selection

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<Tensor> inputs;
  for (const auto& t : parts) {
    detail::require_matrix(t, "concat_rows");
    if (t.cols() != c)
      throw DimensionError("concat_rows: column mismatch, " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(t.shape()));
    total += t.size() / std::max<std::size_t>(c, 1);
    inputs.push_back(t);
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  return detail::make_result({total, c}, std::move(out), std::move(inputs), [](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      if (in->requires_grad)
        for (std::size_t i = 0; i < n; ++i) in->grad[i] += self.grad[off + i];
      off += n;
    }
  });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_rows(std::span<const Tensor>(parts));
}

/// out[i] = a[idx[i]]; repeated indices accumulate in the adjoint.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
  detail::require_matrix(a, "gather_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out;
  out.reserve(idx.size() * c);
  for (auto i : idx) {
    if (i >= r) throw DimensionError("gather_rows: index " + std::to_string(i) + " out of " + shape_str(a.shape()));
    out.insert(out.end(), a.data().begin() + static_cast<std::ptrdiff_t>(i * c),
               a.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  }
  const std::size_t k = idx.size();
  return detail::make_result({k, c}, std::move(out), {a}, [idx = std::move(idx), c](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) in.grad[idx[i] * c + j] += self.grad[i * c + j];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows())
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(a, std::move(idx));
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  if (begin > end || end > c)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * c + begin + j];
  return detail::make_result({r, w}, std::move(out), {a}, [r, c, w, begin](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) in.grad[i * c + begin + j] += self.grad[i * w + j];
  });
}

/// out[v] = sum of rows segments[v] of `a`. Each coordinate sums its addends in
/// ascending value order, so the result depends only on the multiset of rows.
inline Tensor segment_sum(const Tensor& a, std::vector<std::vector<std::size_t>> segments) {
  detail::require_matrix(a, "segment_sum");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(segments.size() * c, 0.0);
  std::vector<double> buf;
  for (std::size_t v = 0; v < segments.size(); ++v) {
    for (auto i : segments[v])
      if (i >= r) throw DimensionError("segment_sum: row " + std::to_string(i) + " out of " + shape_str(a.shape()));
    for (std::size_t j = 0; j < c; ++j) {
      buf.clear();
      for (auto i : segments[v]) buf.push_back(a[i * c + j]);
      std::sort(buf.begin(), buf.end());
      double s = 0.0;
      for (double x : buf) s += x;
      out[v * c + j] = s;
    }
  }
  const std::size_t n = segments.size();
  return detail::make_result({n, c}, std::move(out), {a}, [segs = std::move(segments), c](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t v = 0; v < segs.size(); ++v)
      for (auto i : segs[v])
        for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[v * c + j];
  });
}

// ---------------------------------------------------------------------------
// Fused losses and normalization

/// -log softmax(logits)[label] for a single row of logits.
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t c = logits.size();
  if (c == 0) throw DimensionError("cross_entropy: empty logits");
  if (label >= c) throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                                      std::to_string(c) + " classes");
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return detail::make_result({}, {lse - logits[label]}, {logits}, [c, label, lse](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(in.value[j] - lse);
      in.grad[j] += self.grad[0] * (p - (j == label ? 1.0 : 0.0));
    }
  });
}

/// Row-wise layer normalization with per-column gain and bias.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_matrix(x, "layer_norm_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c)
    throw DimensionError("layer_norm_rows: gain/bias length must equal " + std::to_string(c));
  std::vector<double> out(r * c), xhat(r * c), inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x[i * c + j] - mu) * (x[i * c + j] - mu);
    var /= static_cast<double>(c);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[i * c + j] - mu) * inv[i];
      out[i * c + j] = xhat[i * c + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [r, c, xhat = std::move(xhat), inv = std::move(inv)](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dxh = g[i * c + j] * gn.value[j];
            s1 += dxh;
            s2 += dxh * xhat[i * c + j];
            if (gn.requires_grad) gn.grad[j] += g[i * c + j] * xhat[i * c + j];
            if (bn.requires_grad) bn.grad[j] += g[i * c + j];
          }
          if (xn.requires_grad) {
            const double cc = static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[i * c + j] * gn.value[j];
              xn.grad[i * c + j] += inv[i] / cc * (cc * dxh - s1 - xhat[i * c + j] * s2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

/// Max over coordinates of |analytic - central difference| / (|central difference| + 1e-8).
/// `x` must be a leaf that `f` reads; it is perturbed in place and restored.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5) {
  if (!(h > 0.0)) throw ArgumentError("grad_check: step must be positive");
  if (!x.is_leaf()) throw ArgumentError("grad_check: x must be a leaf tensor");
  x.zero_grad();
  Tensor y = f(x);
  std::vector<double> analytic(x.size(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    analytic.assign(x.grad().begin(), x.grad().end());
  }
  auto data = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    const double xp = orig + h, xm = orig - h;  // representable step
    data[i] = xp;
    const double fp = f(x).item();
    data[i] = xm;
    const double fm = f(x).item();
    data[i] = orig;
    const double numeric = (fp - fm) / (xp - xm);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
  }
  x.zero_grad();
  return worst;
}

}  // namespace fig
