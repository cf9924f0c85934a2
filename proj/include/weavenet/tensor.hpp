// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor library with reverse-mode automatic differentiation.
// Tensors are shared handles onto contiguous row-major storage; every op that
// touches a gradient-requiring input records a node on the implicit tape, and
// backward() replays the recorded nodes in reverse topological order.
// float64 is the training/testing scalar; the same templates instantiate at
// float32 for the inference-only path.

#ifndef WEAVENET_TENSOR_HPP_
#define WEAVENET_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "weavenet/common.hpp"

namespace weavenet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// When enabled, every op forward pass asserts its output is NaN/Inf free.
inline bool& nan_check_enabled() {
  static bool enabled = false;
  return enabled;
}

template <typename Scalar>
class TensorT;

template <typename Scalar>
struct NodeT {
  std::vector<TensorT<Scalar>> inputs;
  // Reads the output gradient and accumulates into the inputs' gradients.
  std::function<void(const TensorT<Scalar>&)> backprop;
};

template <typename Scalar>
struct TensorImplT {
  Shape shape;
  std::vector<Scalar> values;
  std::vector<Scalar> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::shared_ptr<NodeT<Scalar>> node;
};

template <typename Scalar>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.impl_ = std::make_shared<TensorImplT<Scalar>>();
    t.impl_->shape = std::move(shape);
    t.impl_->values.assign(shape_numel(t.impl_->shape), Scalar(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from(Shape shape, std::vector<Scalar> values,
                      bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    TensorT t;
    t.impl_ = std::make_shared<TensorImplT<Scalar>>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(Scalar v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }

  // Rows/cols view of a matrix-like tensor: the last axis is the feature
  // axis, everything before it is flattened into rows.
  std::int64_t cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }
  std::int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  std::vector<Scalar>& values() { return impl_->values; }
  const std::vector<Scalar>& values() const { return impl_->values; }
  Scalar* data() { return impl_->values.data(); }
  const Scalar* data() const { return impl_->values.data(); }
  Scalar item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->values[0];
  }
  Scalar at(std::int64_t r, std::int64_t c) const { return impl_->values[r * cols() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // TensorT is a shared handle: a const handle still exposes mutable
  // gradient storage, mirroring how copies captured on the tape behave.
  std::vector<Scalar>& grad() const {
    ensure_grad();
    return impl_->grad;
  }
  const std::vector<Scalar>& grad_ref() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void ensure_grad() const {
    if (impl_->grad.size() != impl_->values.size()) impl_->grad.assign(impl_->values.size(), Scalar(0));
  }
  void zero_grad() const { impl_->grad.assign(impl_->values.size(), Scalar(0)); }

  TensorImplT<Scalar>* impl() const { return impl_.get(); }
  const std::shared_ptr<NodeT<Scalar>>& node() const { return impl_->node; }
  void set_node(std::shared_ptr<NodeT<Scalar>> n) { impl_->node = std::move(n); }

 private:
  std::shared_ptr<TensorImplT<Scalar>> impl_;
};

using Tensor = TensorT<double>;

namespace detail {

template <typename Scalar>
inline void check_finite(const TensorT<Scalar>& t, const char* op) {
  if (!nan_check_enabled()) return;
  for (Scalar v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

template <typename Scalar>
inline bool any_requires_grad(std::initializer_list<TensorT<Scalar>> ts) {
  for (const auto& t : ts) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

// Attaches a backprop node to `out` when any input participates in grads.
template <typename Scalar>
inline void record(TensorT<Scalar>& out, std::vector<TensorT<Scalar>> inputs,
                   std::function<void(const TensorT<Scalar>&)> backprop) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) needs = true;
  }
  if (!needs) return;
  out.set_requires_grad(true);
  auto node = std::make_shared<NodeT<Scalar>>();
  node->inputs = std::move(inputs);
  node->backprop = std::move(backprop);
  out.set_node(std::move(node));
}

template <typename Scalar>
using MatMap = Eigen::Map<
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// Walks the recorded op graph (the tape) from a scalar loss, zeroes the
// gradients of every tensor reachable through it, then runs each node's
// backprop in reverse topological order. Gradients accumulate additively, so
// a parameter consumed twice receives the sum of both contributions.
template <typename Scalar>
inline void backward(const TensorT<Scalar>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  // Post-order DFS; the reversed order is a valid reverse-topological order.
  std::vector<TensorT<Scalar>> order;
  std::unordered_set<const TensorImplT<Scalar>*> seen;
  std::vector<std::pair<TensorT<Scalar>, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  seen.insert(loss.impl());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.node();
    if (node && next < node->inputs.size()) {
      TensorT<Scalar> in = node->inputs[next++];
      if (in.defined() && !seen.count(in.impl())) {
        seen.insert(in.impl());
        stack.emplace_back(in, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }
  for (auto& t : order) t.zero_grad();
  {
    TensorT<Scalar> l = loss;
    l.grad()[0] = Scalar(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node()) it->node()->backprop(*it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename Scalar>
inline void check_same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename Scalar>
inline TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  check_same_shape(a, b, "add");
  auto out = TensorT<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  detail::record<Scalar>(out, {a, b}, [a, b](const TensorT<Scalar>& o) {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (std::int64_t i = 0; i < a.numel(); ++i) g[i] += o.grad_ref()[i];
    }
    if (b.requires_grad()) {
      auto& g = b.grad();
      for (std::int64_t i = 0; i < b.numel(); ++i) g[i] += o.grad_ref()[i];
    }
  });
  detail::check_finite(out, "add");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  check_same_shape(a, b, "sub");
  auto out = TensorT<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
  detail::record<Scalar>(out, {a, b}, [a, b](const TensorT<Scalar>& o) {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (std::int64_t i = 0; i < a.numel(); ++i) g[i] += o.grad_ref()[i];
    }
    if (b.requires_grad()) {
      auto& g = b.grad();
      for (std::int64_t i = 0; i < b.numel(); ++i) g[i] -= o.grad_ref()[i];
    }
  });
  detail::check_finite(out, "sub");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
  check_same_shape(a, b, "mul");
  auto out = TensorT<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  detail::record<Scalar>(out, {a, b}, [a, b](const TensorT<Scalar>& o) {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (std::int64_t i = 0; i < a.numel(); ++i) g[i] += o.grad_ref()[i] * b.values()[i];
    }
    if (b.requires_grad()) {
      auto& g = b.grad();
      for (std::int64_t i = 0; i < b.numel(); ++i) g[i] += o.grad_ref()[i] * a.values()[i];
    }
  });
  detail::check_finite(out, "mul");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> mul_scalar(const TensorT<Scalar>& a, Scalar s) {
  auto out = TensorT<Scalar>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] * s;
  detail::record<Scalar>(out, {a}, [a, s](const TensorT<Scalar>& o) {
    auto& g = a.grad();
    for (std::int64_t i = 0; i < a.numel(); ++i) g[i] += o.grad_ref()[i] * s;
  });
  detail::check_finite(out, "mul_scalar");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> relu(const TensorT<Scalar>& x) {
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out.values()[i] = x.values()[i] > Scalar(0) ? x.values()[i] : Scalar(0);
  // Subgradient at 0 is fixed to 0.
  detail::record<Scalar>(out, {x}, [x](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i)
      if (x.values()[i] > Scalar(0)) g[i] += o.grad_ref()[i];
  });
  detail::check_finite(out, "relu");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> square(const TensorT<Scalar>& x) {
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.values()[i] = x.values()[i] * x.values()[i];
  detail::record<Scalar>(out, {x}, [x](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) g[i] += Scalar(2) * x.values()[i] * o.grad_ref()[i];
  });
  detail::check_finite(out, "square");
  return out;
}

// Backward clamps 1/(2*sqrt(x)) at x=0 to 0 so RMS reductions of exactly-zero
// features stay finite.
template <typename Scalar>
inline TensorT<Scalar> sqrt(const TensorT<Scalar>& x) {
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.values()[i] = std::sqrt(x.values()[i]);
  detail::record<Scalar>(out, {x}, [x](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      Scalar s = o.values()[i];
      if (s > Scalar(0)) g[i] += o.grad_ref()[i] / (Scalar(2) * s);
    }
  });
  detail::check_finite(out, "sqrt");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> exp(const TensorT<Scalar>& x) {
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.values()[i] = std::exp(x.values()[i]);
  detail::record<Scalar>(out, {x}, [x](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) g[i] += o.values()[i] * o.grad_ref()[i];
  });
  detail::check_finite(out, "exp");
  return out;
}

// Scales row i of x by the constant v[i]. v is a plain buffer (masks, 1/n
// counts) and never receives gradients.
template <typename Scalar>
inline TensorT<Scalar> scale_rows(const TensorT<Scalar>& x, const std::vector<Scalar>& v) {
  const std::int64_t rows = x.rows(), cols = x.cols();
  if (static_cast<std::int64_t>(v.size()) != rows) {
    throw ShapeError("scale_rows: scale length " + std::to_string(v.size()) +
                     " vs rows " + std::to_string(rows));
  }
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      out.values()[r * cols + c] = x.values()[r * cols + c] * v[r];
  detail::record<Scalar>(out, {x}, [x, v, rows, cols](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c)
        g[r * cols + c] += o.grad_ref()[r * cols + c] * v[r];
  });
  detail::check_finite(out, "scale_rows");
  return out;
}

// Concatenation along the last (feature) axis.
template <typename Scalar>
inline TensorT<Scalar> concat(const std::vector<TensorT<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::int64_t rows = parts[0].rows();
  std::int64_t total_cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat: row count mismatch");
    total_cols += p.cols();
  }
  auto out = TensorT<Scalar>::zeros({rows, total_cols});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t pc = p.cols();
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy_n(p.data() + r * pc, pc, out.data() + r * total_cols + off);
    off += pc;
  }
  detail::record<Scalar>(out, parts, [parts, rows, total_cols](const TensorT<Scalar>& o) {
    std::int64_t off = 0;
    for (auto p : parts) {
      const std::int64_t pc = p.cols();
      if (p.requires_grad()) {
        auto& g = p.grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < pc; ++c)
            g[r * pc + c] += o.grad_ref()[r * total_cols + off + c];
      }
      off += pc;
    }
  });
  detail::check_finite(out, "concat");
  return out;
}

// out[m] = x[idx[m]]; rows may repeat.
template <typename Scalar>
inline TensorT<Scalar> gather_rows(const TensorT<Scalar>& x,
                                   const std::vector<std::int64_t>& idx) {
  const std::int64_t cols = x.cols(), rows = x.rows();
  auto out = TensorT<Scalar>::zeros({static_cast<std::int64_t>(idx.size()), cols});
  for (std::size_t m = 0; m < idx.size(); ++m) {
    if (idx[m] < 0 || idx[m] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.data() + idx[m] * cols, cols, out.data() + m * cols);
  }
  detail::record<Scalar>(out, {x}, [x, idx, cols](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::size_t m = 0; m < idx.size(); ++m)
      for (std::int64_t c = 0; c < cols; ++c)
        g[idx[m] * cols + c] += o.grad_ref()[m * cols + c];
  });
  detail::check_finite(out, "gather_rows");
  return out;
}

// out[seg[i]] += x[i]; the order-invariant sum used for P->A and the
// molecule-level reductions.
template <typename Scalar>
inline TensorT<Scalar> segment_sum(const TensorT<Scalar>& x,
                                   const std::vector<std::int64_t>& seg,
                                   std::int64_t num_segments) {
  const std::int64_t cols = x.cols(), rows = x.rows();
  if (static_cast<std::int64_t>(seg.size()) != rows) {
    throw ShapeError("segment_sum: segment id count mismatch");
  }
  auto out = TensorT<Scalar>::zeros({num_segments, cols});
  for (std::int64_t r = 0; r < rows; ++r) {
    if (seg[r] < 0 || seg[r] >= num_segments) throw ShapeError("segment_sum: id out of range");
    for (std::int64_t c = 0; c < cols; ++c)
      out.values()[seg[r] * cols + c] += x.values()[r * cols + c];
  }
  detail::record<Scalar>(out, {x}, [x, seg, cols, rows](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c)
        g[r * cols + c] += o.grad_ref()[seg[r] * cols + c];
  });
  detail::check_finite(out, "segment_sum");
  return out;
}

// Column sums over rows where mask is nonzero -> [cols]. Masked entries
// contribute exactly 0, in value and in gradient.
template <typename Scalar>
inline TensorT<Scalar> masked_sum(const TensorT<Scalar>& x, const std::vector<Scalar>& mask) {
  const std::int64_t rows = x.rows(), cols = x.cols();
  if (static_cast<std::int64_t>(mask.size()) != rows) {
    throw ShapeError("masked_sum: mask length mismatch");
  }
  auto out = TensorT<Scalar>::zeros({cols});
  for (std::int64_t r = 0; r < rows; ++r) {
    if (mask[r] == Scalar(0)) continue;
    for (std::int64_t c = 0; c < cols; ++c) out.values()[c] += x.values()[r * cols + c];
  }
  detail::record<Scalar>(out, {x}, [x, mask, rows, cols](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      if (mask[r] == Scalar(0)) continue;
      for (std::int64_t c = 0; c < cols; ++c) g[r * cols + c] += o.grad_ref()[c];
    }
  });
  detail::check_finite(out, "masked_sum");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> sum(const TensorT<Scalar>& x) {
  auto out = TensorT<Scalar>::zeros({1});
  out.values()[0] = std::accumulate(x.values().begin(), x.values().end(), Scalar(0));
  detail::record<Scalar>(out, {x}, [x](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) g[i] += o.grad_ref()[0];
  });
  detail::check_finite(out, "sum");
  return out;
}

template <typename Scalar>
inline TensorT<Scalar> mean(const TensorT<Scalar>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), Scalar(1) / Scalar(x.numel()));
}

// ---------------------------------------------------------------------------
// Dense (Eq.-1 neuron bank): affine map over the last axis.
// ---------------------------------------------------------------------------

template <typename Scalar>
inline TensorT<Scalar> dense(const TensorT<Scalar>& x, const TensorT<Scalar>& w,
                             const TensorT<Scalar>& b) {
  const std::int64_t in = x.cols(), rows = x.rows();
  if (w.rank() != 2 || w.dim(0) != in) {
    throw ShapeError("dense: weight shape " + shape_str(w.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  const std::int64_t out_dim = w.dim(1);
  if (b.numel() != out_dim) throw ShapeError("dense: bias length mismatch");

  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  auto out = TensorT<Scalar>::from(std::move(out_shape),
                                   std::vector<Scalar>(rows * out_dim));
  {
    detail::ConstMatMap<Scalar> X(x.data(), rows, in);
    detail::ConstMatMap<Scalar> W(w.data(), in, out_dim);
    detail::MatMap<Scalar> Y(out.data(), rows, out_dim);
    Y.noalias() = X * W;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < out_dim; ++c) Y(r, c) += b.values()[c];
  }
  detail::record<Scalar>(out, {x, w, b}, [x, w, b, rows, in, out_dim](
                                             const TensorT<Scalar>& o) mutable {
    detail::ConstMatMap<Scalar> dY(o.grad_ref().data(), rows, out_dim);
    if (x.requires_grad()) {
      detail::ConstMatMap<Scalar> W(w.data(), in, out_dim);
      detail::MatMap<Scalar> dX(x.grad().data(), rows, in);
      dX.noalias() += dY * W.transpose();
    }
    if (w.requires_grad()) {
      detail::ConstMatMap<Scalar> X(x.data(), rows, in);
      detail::MatMap<Scalar> dW(w.grad().data(), in, out_dim);
      dW.noalias() += X.transpose() * dY;
    }
    if (b.requires_grad()) {
      auto& db = b.grad();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < out_dim; ++c) db[c] += dY(r, c);
    }
  });
  detail::check_finite(out, "dense");
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization with row masking and running statistics.
// ---------------------------------------------------------------------------

enum class BnMode { kTrain, kInfer };

template <typename Scalar>
struct BatchNormStateT {
  std::vector<Scalar> running_mean;
  std::vector<Scalar> running_var;
  std::int64_t skipped_batches = 0;  // train batches with < 2 valid rows

  void init(std::int64_t dim) {
    if (static_cast<std::int64_t>(running_mean.size()) == dim) return;
    running_mean.assign(dim, Scalar(0));
    running_var.assign(dim, Scalar(1));
  }
};

using BatchNormState = BatchNormStateT<double>;

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

// Train mode normalizes per feature over the rows with nonzero mask and
// updates the running statistics; infer mode applies the running statistics.
// Masked rows are zero on output and receive no gradient. A train batch with
// fewer than 2 valid rows passes through unnormalized and is counted.
template <typename Scalar>
inline TensorT<Scalar> batch_norm(const TensorT<Scalar>& x, const TensorT<Scalar>& gamma,
                                  const TensorT<Scalar>& beta, const std::vector<Scalar>& mask,
                                  BatchNormStateT<Scalar>& state, BnMode mode) {
  const std::int64_t rows = x.rows(), cols = x.cols();
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw ShapeError("batch_norm: gamma/beta length mismatch");
  }
  if (!mask.empty() && static_cast<std::int64_t>(mask.size()) != rows) {
    throw ShapeError("batch_norm: mask length mismatch");
  }
  state.init(cols);
  const bool all_valid = mask.empty();
  auto valid = [&](std::int64_t r) { return all_valid || mask[r] != Scalar(0); };
  std::int64_t m = rows;
  if (!all_valid) {
    m = 0;
    for (std::int64_t r = 0; r < rows; ++r)
      if (valid(r)) ++m;
  }

  auto out = TensorT<Scalar>::zeros(x.shape());

  if (mode == BnMode::kTrain && m < 2) {
    state.skipped_batches++;
    for (std::int64_t r = 0; r < rows; ++r) {
      if (!valid(r)) continue;
      for (std::int64_t c = 0; c < cols; ++c)
        out.values()[r * cols + c] = x.values()[r * cols + c];
    }
    detail::record<Scalar>(out, {x, gamma, beta},
                           [x, mask, all_valid, rows, cols](const TensorT<Scalar>& o) {
                             if (!x.requires_grad()) return;
                             auto& g = x.grad();
                             for (std::int64_t r = 0; r < rows; ++r) {
                               if (!all_valid && mask[r] == Scalar(0)) continue;
                               for (std::int64_t c = 0; c < cols; ++c)
                                 g[r * cols + c] += o.grad_ref()[r * cols + c];
                             }
                           });
    return out;
  }

  std::vector<Scalar> mu(cols), inv_std(cols);
  if (mode == BnMode::kTrain) {
    std::vector<Scalar> var(cols, Scalar(0));
    for (std::int64_t c = 0; c < cols; ++c) mu[c] = Scalar(0);
    for (std::int64_t r = 0; r < rows; ++r) {
      if (!valid(r)) continue;
      for (std::int64_t c = 0; c < cols; ++c) mu[c] += x.values()[r * cols + c];
    }
    for (std::int64_t c = 0; c < cols; ++c) mu[c] /= Scalar(m);
    for (std::int64_t r = 0; r < rows; ++r) {
      if (!valid(r)) continue;
      for (std::int64_t c = 0; c < cols; ++c) {
        Scalar d = x.values()[r * cols + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (std::int64_t c = 0; c < cols; ++c) {
      var[c] /= Scalar(m);
      inv_std[c] = Scalar(1) / std::sqrt(var[c] + Scalar(kBatchNormEps));
      state.running_mean[c] = Scalar(kBatchNormMomentum) * state.running_mean[c] +
                              Scalar(1 - kBatchNormMomentum) * mu[c];
      state.running_var[c] = Scalar(kBatchNormMomentum) * state.running_var[c] +
                             Scalar(1 - kBatchNormMomentum) * var[c];
    }
  } else {
    for (std::int64_t c = 0; c < cols; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = Scalar(1) / std::sqrt(state.running_var[c] + Scalar(kBatchNormEps));
    }
  }

  for (std::int64_t r = 0; r < rows; ++r) {
    if (!valid(r)) continue;
    for (std::int64_t c = 0; c < cols; ++c) {
      Scalar xhat = (x.values()[r * cols + c] - mu[c]) * inv_std[c];
      out.values()[r * cols + c] = gamma.values()[c] * xhat + beta.values()[c];
    }
  }

  const bool train_stats = (mode == BnMode::kTrain);
  detail::record<Scalar>(out, {x, gamma, beta},
                         [x, gamma, beta, mask, all_valid, rows, cols, m, mu, inv_std,
                          train_stats](const TensorT<Scalar>& o) {
    auto valid = [&](std::int64_t r) { return all_valid || mask[r] != Scalar(0); };
    // Per-column sums of dy and dy*xhat over valid rows.
    std::vector<Scalar> sum_dy(cols, Scalar(0)), sum_dy_xhat(cols, Scalar(0));
    for (std::int64_t r = 0; r < rows; ++r) {
      if (!valid(r)) continue;
      for (std::int64_t c = 0; c < cols; ++c) {
        Scalar dy = o.grad_ref()[r * cols + c];
        Scalar xhat = (x.values()[r * cols + c] - mu[c]) * inv_std[c];
        sum_dy[c] += dy;
        sum_dy_xhat[c] += dy * xhat;
      }
    }
    if (gamma.requires_grad()) {
      auto& g = gamma.grad();
      for (std::int64_t c = 0; c < cols; ++c) g[c] += sum_dy_xhat[c];
    }
    if (beta.requires_grad()) {
      auto& g = beta.grad();
      for (std::int64_t c = 0; c < cols; ++c) g[c] += sum_dy[c];
    }
    if (x.requires_grad()) {
      auto& g = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        if (!valid(r)) continue;
        for (std::int64_t c = 0; c < cols; ++c) {
          Scalar dy = o.grad_ref()[r * cols + c];
          Scalar xhat = (x.values()[r * cols + c] - mu[c]) * inv_std[c];
          Scalar dx;
          if (train_stats) {
            dx = gamma.values()[c] * inv_std[c] *
                 (dy - sum_dy[c] / Scalar(m) - xhat * sum_dy_xhat[c] / Scalar(m));
          } else {
            dx = gamma.values()[c] * inv_std[c] * dy;
          }
          g[r * cols + c] += dx;
        }
      }
    }
  });
  detail::check_finite(out, "batch_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Softmax heads and losses
// ---------------------------------------------------------------------------

template <typename Scalar>
inline TensorT<Scalar> softmax(const TensorT<Scalar>& x) {
  const std::int64_t rows = x.rows(), cols = x.cols();
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    Scalar mx = x.values()[r * cols];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x.values()[r * cols + c]);
    Scalar denom = Scalar(0);
    for (std::int64_t c = 0; c < cols; ++c) {
      out.values()[r * cols + c] = std::exp(x.values()[r * cols + c] - mx);
      denom += out.values()[r * cols + c];
    }
    for (std::int64_t c = 0; c < cols; ++c) out.values()[r * cols + c] /= denom;
  }
  detail::record<Scalar>(out, {x}, [x, rows, cols](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      Scalar dot = Scalar(0);
      for (std::int64_t c = 0; c < cols; ++c)
        dot += o.grad_ref()[r * cols + c] * o.values()[r * cols + c];
      for (std::int64_t c = 0; c < cols; ++c)
        g[r * cols + c] += o.values()[r * cols + c] * (o.grad_ref()[r * cols + c] - dot);
    }
  });
  detail::check_finite(out, "softmax");
  return out;
}

// Weighted softmax cross-entropy over per-row class logits. labels[i] is the
// class index; weights[i] scales the row's contribution, 0 silencing it in
// value and gradient (how missing labels are encoded).
template <typename Scalar>
inline TensorT<Scalar> weighted_cross_entropy(const TensorT<Scalar>& logits,
                                              const std::vector<int>& labels,
                                              const std::vector<Scalar>& weights) {
  const std::int64_t rows = logits.rows(), cols = logits.cols();
  if (static_cast<std::int64_t>(labels.size()) != rows ||
      static_cast<std::int64_t>(weights.size()) != rows) {
    throw ShapeError("weighted_cross_entropy: labels/weights length mismatch");
  }
  auto out = TensorT<Scalar>::zeros({1});
  std::vector<Scalar> probs(rows * cols);
  Scalar total = Scalar(0);
  for (std::int64_t r = 0; r < rows; ++r) {
    if (weights[r] == Scalar(0)) continue;
    Scalar mx = logits.values()[r * cols];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, logits.values()[r * cols + c]);
    Scalar denom = Scalar(0);
    for (std::int64_t c = 0; c < cols; ++c) {
      probs[r * cols + c] = std::exp(logits.values()[r * cols + c] - mx);
      denom += probs[r * cols + c];
    }
    for (std::int64_t c = 0; c < cols; ++c) probs[r * cols + c] /= denom;
    total -= weights[r] * std::log(std::max(probs[r * cols + labels[r]],
                                            std::numeric_limits<Scalar>::min()));
  }
  out.values()[0] = total;
  detail::record<Scalar>(out, {logits},
                         [logits, labels, weights, probs, rows, cols](const TensorT<Scalar>& o) {
    auto& g = logits.grad();
    const Scalar dl = o.grad_ref()[0];
    for (std::int64_t r = 0; r < rows; ++r) {
      if (weights[r] == Scalar(0)) continue;
      for (std::int64_t c = 0; c < cols; ++c) {
        Scalar ind = (c == labels[r]) ? Scalar(1) : Scalar(0);
        g[r * cols + c] += dl * weights[r] * (probs[r * cols + c] - ind);
      }
    }
  });
  detail::check_finite(out, "weighted_cross_entropy");
  return out;
}

// Weighted squared-error loss: sum_i w_i * (pred_i - target_i)^2.
template <typename Scalar>
inline TensorT<Scalar> l2_loss(const TensorT<Scalar>& pred, const std::vector<Scalar>& target,
                               const std::vector<Scalar>& weights) {
  const std::int64_t n = pred.numel();
  if (static_cast<std::int64_t>(target.size()) != n ||
      static_cast<std::int64_t>(weights.size()) != n) {
    throw ShapeError("l2_loss: target/weights length mismatch");
  }
  auto out = TensorT<Scalar>::zeros({1});
  for (std::int64_t i = 0; i < n; ++i) {
    Scalar d = pred.values()[i] - target[i];
    out.values()[0] += weights[i] * d * d;
  }
  detail::record<Scalar>(out, {pred}, [pred, target, weights, n](const TensorT<Scalar>& o) {
    auto& g = pred.grad();
    const Scalar dl = o.grad_ref()[0];
    for (std::int64_t i = 0; i < n; ++i)
      g[i] += dl * Scalar(2) * weights[i] * (pred.values()[i] - target[i]);
  });
  detail::check_finite(out, "l2_loss");
  return out;
}

// Multiplicative Bernoulli masking with inverted scaling; identity when
// disabled. The mask is drawn once per call from the supplied generator.
template <typename Scalar>
inline TensorT<Scalar> dropout(const TensorT<Scalar>& x, double rate, Rng& rng, bool enabled) {
  if (!enabled || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const Scalar keep_inv = Scalar(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<Scalar> m(x.numel());
  for (auto& v : m) v = keep(rng) ? keep_inv : Scalar(0);
  auto out = TensorT<Scalar>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out.values()[i] = x.values()[i] * m[i];
  detail::record<Scalar>(out, {x}, [x, m](const TensorT<Scalar>& o) {
    auto& g = x.grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) g[i] += o.grad_ref()[i] * m[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Parameters and Adagrad
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ParameterT {
  std::string name;
  TensorT<Scalar> value;
  std::vector<Scalar> accumulator;  // Adagrad per-element sum of g^2, >= 0

  ParameterT() = default;
  ParameterT(std::string n, TensorT<Scalar> v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    accumulator.assign(value.numel(), Scalar(0));
  }
};

using Parameter = ParameterT<double>;

inline constexpr double kAdagradEps = 1e-8;

// acc += g^2; p -= lr * g / (sqrt(acc) + eps).
template <typename Scalar>
inline void adagrad_step(std::vector<ParameterT<Scalar>*>& params, Scalar lr,
                         Scalar eps = Scalar(kAdagradEps)) {
  for (auto* p : params) {
    if (!p->value.has_grad()) continue;
    const auto& g = p->value.grad_ref();
    auto& v = p->value.values();
    auto& acc = p->accumulator;
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc[i] += g[i] * g[i];
      v[i] -= lr * g[i] / (std::sqrt(acc[i]) + eps);
    }
  }
}

}  // namespace weavenet

#endif  // WEAVENET_TENSOR_HPP_
