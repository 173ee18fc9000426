// Copyright 2026 The MAF Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op returns a fresh Tensor that remembers its inputs and a backward
// rule when any input requires a gradient. backward() walks the recorded
// graph in reverse topological order. Leaf gradients accumulate across
// calls until zero_grad(); intermediate gradients are rebuilt on each call.
//
// Broadcasting follows trailing-axis alignment: shapes are compared from the
// last axis backwards and an axis of size 1 stretches to match the other
// operand. A missing leading axis counts as size 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maf/errors.hpp"

namespace maf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
};

inline thread_local bool grad_disabled = false;

inline std::vector<double>& grad_buffer(Node& node) {
  if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) { node_->data.assign(1, 0.0); }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape));
    }
    Tensor t(std::make_shared<detail::Node>());
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 1.0, requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }
  // Row-major literal: matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(data), requires_grad);
  }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->data.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_string(shape()));
    }
    return node_->shape[axis];
  }

  std::span<const double> data() const noexcept { return node_->data; }
  const std::vector<double>& values() const noexcept { return node_->data; }

  // Only leaves may be mutated; recorded results are immutable.
  std::span<double> mutable_data() {
    if (!node_->is_leaf) {
      throw ContractError(std::string("in-place mutation of recorded tensor (op ") +
                          node_->op + ")");
    }
    return node_->data;
  }

  double operator()(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->shape[1] + c];
  }
  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool value) {
    if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = value;
  }
  bool is_leaf() const noexcept { return node_->is_leaf; }
  const char* op() const noexcept { return node_->op; }

  bool has_grad() const noexcept { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const noexcept { return node_->grad; }
  Tensor grad_tensor() const {
    if (!has_grad()) return zeros(shape());
    return from(shape(), node_->grad);
  }
  void zero_grad() noexcept { node_->grad.clear(); }

  // Copy of the values without history.
  Tensor detach() const { return from(shape(), node_->data); }
  // Same storage identity check.
  bool same(const Tensor& other) const noexcept { return node_ == other.node_; }

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

  // Builds a recorded result. `backward` runs only when some input needs a
  // gradient; inputs that do not are skipped inside the rules.
  static Tensor record(Shape shape, std::vector<double> data, const char* op,
                       std::initializer_list<Tensor> inputs,
                       std::function<void(detail::Node&)> backward) {
    Tensor out = from(std::move(shape), std::move(data));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any && !detail::grad_disabled) {
      out.node_->requires_grad = true;
      out.node_->is_leaf = false;
      out.node_->op = op;
      for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables recording on this thread for the guard's lifetime. Results are
// plain values with no history.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.shape()); }
inline Tensor ones_like(const Tensor& t) { return Tensor::ones(t.shape()); }

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_string(t.shape()));
  }
}

inline bool wants_grad(const Node& n) { return n.requires_grad; }

// Strides of `in` viewed inside the broadcast result shape `out`; broadcast
// axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ia = in.size() - 1 - k;
    const std::size_t oa = out.size() - 1 - k;
    strides[oa] = in[ia] == 1 && out[oa] != 1 ? 0 : stride;
    stride *= in[ia];
  }
  return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " +
                       shape_string(b) + " are not broadcastable");
    }
    out[r - 1 - k] = da == 1 ? db : da;
  }
  return out;
}

// Visits every flat output index with the matching flat input offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = shape_numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul };

inline Tensor binary(Binary kind, const Tensor& a, const Tensor& b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul"};
  const char* name = kNames[static_cast<int>(kind)];
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case Binary::kAdd: return x + y;
      case Binary::kSub: return x - y;
      case Binary::kMul: return x * y;
    }
    return 0.0;
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(pa[i], pb[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      out[i] = apply(pa[ia], pb[ib]);
    });
  }
  Tensor av = a, bv = b;
  return Tensor::record(
      out_shape, std::move(out), name, {a, b},
      [kind, av, bv, out_shape, sa, sb, same](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const auto& g = self.grad;
        const double* pa = av.data().data();
        const double* pb = bv.data().data();
        double* ga = na.requires_grad ? grad_buffer(na).data() : nullptr;
        double* gb = nb.requires_grad ? grad_buffer(nb).data() : nullptr;
        auto step = [&](std::size_t i, std::size_t ia, std::size_t ib) {
          switch (kind) {
            case Binary::kAdd:
              if (ga) ga[ia] += g[i];
              if (gb) gb[ib] += g[i];
              break;
            case Binary::kSub:
              if (ga) ga[ia] += g[i];
              if (gb) gb[ib] -= g[i];
              break;
            case Binary::kMul:
              if (ga) ga[ia] += g[i] * pb[ib];
              if (gb) gb[ib] += g[i] * pa[ia];
              break;
          }
        };
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
        } else {
          for_each_broadcast(out_shape, sa, sb, step);
        }
      });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  Tensor xv = x;
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tensor::record(x.shape(), std::move(out), name, {x}, [xv, saved, deriv](Node& self) {
    Node& nx = *self.inputs[0];
    auto& gx = grad_buffer(nx);
    const auto in = xv.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(in[i], (*saved)[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting.

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::Binary::kMul, a, b); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(
      x, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

// 1 - x, the complement used by convex gates.
inline Tensor one_minus(const Tensor& x) {
  return detail::unary(
      x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

// Logistic function. Saturates at the nearest interior doubles so outputs
// stay strictly inside (0, 1).
inline Tensor sigmoid(const Tensor& x) {
  static constexpr double lo = std::numeric_limits<double>::min();
  static constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return detail::unary(
      x, "sigmoid",
      [](double v) {
        const double y = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::clamp(y, lo, hi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

// GELU, tanh approximation. Smooth everywhere, which keeps finite-difference
// checks meaningful.
inline Tensor gelu(const Tensor& x) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  return detail::unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      });
}

// ---------------------------------------------------------------------------
// Matrix ops.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * p, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      const double* brow = pb + t * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
    }
  }
  Tensor av = a, bv = b;
  return Tensor::record({m, p}, std::move(out), "matmul", {a, b}, [av, bv, m, k, p](detail::Node& self) {
    detail::Node& na = *self.inputs[0];
    detail::Node& nb = *self.inputs[1];
    const double* g = self.grad.data();
    if (na.requires_grad) {
      // dA = dC * B^T
      double* ga = detail::grad_buffer(na).data();
      const double* pb = bv.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * pb[t * p + j];
          ga[i * k + t] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      // dB = A^T * dC
      double* gb = detail::grad_buffer(nb).data();
      const double* pa = av.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          const double a_it = pa[i * k + t];
          for (std::size_t j = 0; j < p; ++j) gb[t * p + j] += a_it * g[i * p + j];
        }
      }
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank2(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return Tensor::record({c, r}, std::move(out), "transpose", {x}, [r, c](detail::Node& self) {
    auto& gx = detail::grad_buffer(*self.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

// Softmax over the last axis of a matrix, stabilised by subtracting each
// row's maximum.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = c ? *std::max_element(row, row + c) : 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return Tensor::record(x.shape(), std::move(out), "softmax_rows", {x}, [saved, r, c](detail::Node& self) {
    auto& gx = detail::grad_buffer(*self.inputs[0]);
    const auto& y = *saved;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

// Columns of `a` followed by columns of `b`.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "concat_last");
  detail::require_rank2(b, "concat_last");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_last: leading dimensions differ: " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  std::vector<double> out(n * (p + q));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(b.data().data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return Tensor::record({n, p + q}, std::move(out), "concat_last", {a, b}, [n, p, q](detail::Node& self) {
    detail::Node& na = *self.inputs[0];
    detail::Node& nb = *self.inputs[1];
    const double* g = self.grad.data();
    if (na.requires_grad) {
      auto& ga = detail::grad_buffer(na);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (nb.requires_grad) {
      auto& gb = detail::grad_buffer(nb);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t n = x.rows(), c = x.cols();
  if (begin > end || end > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data().data() + i * c + begin, w, out.data() + i * w);
  return Tensor::record({n, w}, std::move(out), "slice_cols", {x}, [n, c, w, begin](detail::Node& self) {
    auto& gx = detail::grad_buffer(*self.inputs[0]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += self.grad[i * w + j];
  });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::record({}, {total}, "sum", {x}, [](detail::Node& self) {
    auto& gx = detail::grad_buffer(*self.inputs[0]);
    for (double& v : gx) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Normalises each row to zero mean and unit variance. The optional gain and
// bias are 1 x d rows.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor* gain = nullptr, const Tensor* bias = nullptr,
                              double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm_rows");
  const std::size_t n = x.rows(), d = x.cols();
  for (const Tensor* p : {gain, bias}) {
    if (p && p->numel() != d) {
      throw ShapeError("layer_norm_rows: parameter shape " + shape_string(p->shape()) + " for width " +
                       std::to_string(d));
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n * d);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[i * d + j] - mu) * (in[i * d + j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[i * d + j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * (gain ? gain->data()[j] : 1.0) + (bias ? bias->data()[j] : 0.0);
    }
  }
  Tensor g = gain ? *gain : Tensor::ones({1, d});
  Tensor b = bias ? *bias : Tensor::zeros({1, d});
  return Tensor::record(x.shape(), std::move(out), "layer_norm_rows", {x, g, b},
                        [xhat, inv_std, g, n, d](detail::Node& self) {
                          detail::Node& nx = *self.inputs[0];
                          detail::Node& ng = *self.inputs[1];
                          detail::Node& nb = *self.inputs[2];
                          const double* dy = self.grad.data();
                          const auto gv = g.data();
                          if (ng.requires_grad) {
                            auto& gg = detail::grad_buffer(ng);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < d; ++j) gg[j] += dy[i * d + j] * (*xhat)[i * d + j];
                          }
                          if (nb.requires_grad) {
                            auto& gb = detail::grad_buffer(nb);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < d; ++j) gb[j] += dy[i * d + j];
                          }
                          if (nx.requires_grad) {
                            auto& gx = detail::grad_buffer(nx);
                            for (std::size_t i = 0; i < n; ++i) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                const double dh = dy[i * d + j] * gv[j];
                                m1 += dh;
                                m2 += dh * (*xhat)[i * d + j];
                              }
                              m1 /= static_cast<double>(d);
                              m2 /= static_cast<double>(d);
                              for (std::size_t j = 0; j < d; ++j) {
                                const double dh = dy[i * d + j] * gv[j];
                                gx[i * d + j] += (*inv_std)[i] * (dh - m1 - (*xhat)[i * d + j] * m2);
                              }
                            }
                          }
                        });
}

// Gathers rows of `table` (V x d) by id.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(v));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return Tensor::record({ids.size(), d}, std::move(out), "embedding", {table},
                        [saved = std::move(saved), d](detail::Node& self) {
                          auto& gt = detail::grad_buffer(*self.inputs[0]);
                          for (std::size_t i = 0; i < saved.size(); ++i)
                            for (std::size_t j = 0; j < d; ++j)
                              gt[static_cast<std::size_t>(saved[i]) * d + j] += self.grad[i * d + j];
                        });
}

// Mean negative log-likelihood of `targets` under row-wise softmax of
// `logits`. Rows whose target equals `ignore` contribute nothing and are
// excluded from the mean; with no counted rows the result is 0.
inline Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets, int ignore) {
  detail::require_rank2(logits, "cross_entropy_rows");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<std::vector<double>>(n * v);
  std::size_t counted = 0;
  double total = 0.0;
  const auto in = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw ContractError("cross_entropy_rows: target " + std::to_string(targets[i]) + " out of range");
    }
    const double* row = in.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(row[j] - log_z);
    total += log_z - row[targets[i]];
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  std::vector<int> saved(targets.begin(), targets.end());
  return Tensor::record({}, {total / denom}, "cross_entropy_rows", {logits},
                        [probs, saved = std::move(saved), ignore, n, v, denom](detail::Node& self) {
                          auto& gx = detail::grad_buffer(*self.inputs[0]);
                          const double g = self.grad[0] / denom;
                          for (std::size_t i = 0; i < n; ++i) {
                            if (saved[i] == ignore) continue;
                            for (std::size_t j = 0; j < v; ++j) gx[i * v + j] += g * (*probs)[i * v + j];
                            gx[i * v + static_cast<std::size_t>(saved[i])] -= g;
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reverse pass.

// Nodes reachable from `root` that require a gradient, inputs before
// outputs. Each node appears once.
inline std::vector<detail::Node*> topological_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires a gradient");
  }
  const auto order = topological_order(loss);
  for (detail::Node* n : order) {
    if (n->is_leaf) {
      detail::grad_buffer(*n);
    } else {
      n->grad.assign(n->data.size(), 0.0);
    }
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf && (*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace maf
