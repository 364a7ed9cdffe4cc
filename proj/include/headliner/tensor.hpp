#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "headliner/common.hpp"

namespace headliner {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of 64-bit floats. Copies share the payload; the
// shape is fixed at construction. `node` links the tensor to the Graph that
// produced it and is only meaningful while that graph is alive.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : shape_(std::move(shape)),
        payload_(std::make_shared<std::vector<double>>(shape_numel(shape_),
                                                       fill)),
        requires_grad_(requires_grad) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        payload_(std::make_shared<std::vector<double>>(std::move(values))),
        requires_grad_(requires_grad) {
    if (payload_->size() != shape_numel(shape_)) {
      throw ShapeError("tensor: " + std::to_string(payload_->size()) +
                       " values do not fill shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return payload_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return payload_ ? payload_->size() : 0; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return payload_->data(); }
  const double* data() const { return payload_->data(); }
  std::vector<double>& values() { return *payload_; }
  const std::vector<double>& values() const { return *payload_; }

  double& at(std::size_t i) { return (*payload_)[i]; }
  double at(std::size_t i) const { return (*payload_)[i]; }
  double& at2(std::size_t r, std::size_t c) {
    return (*payload_)[r * shape_[1] + c];
  }
  double at2(std::size_t r, std::size_t c) const {
    return (*payload_)[r * shape_[1] + c];
  }
  double item() const {
    if (size() != 1) {
      throw ShapeError("item: tensor has shape " + shape_str(shape_));
    }
    return (*payload_)[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  /// Stable identity of the shared payload; used by Graph to recognize the
  /// same parameter appearing at several points of one forward pass.
  const void* payload_id() const { return payload_.get(); }

  bool all_finite() const {
    for (double v : *payload_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Tape bookkeeping, managed by Graph.
  int node = -1;
  std::uint64_t graph_serial = 0;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> payload_;
  bool requires_grad_ = false;
};

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                    bool requires_grad = false) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = stddev * rng.gaussian();
  return t;
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                      bool requires_grad = false) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

// Reverse-mode tape. Nodes are appended during the forward pass, so input
// ids always reference earlier nodes; backward walks the records once in
// reverse insertion order. A fresh Graph is built for every forward pass.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const std::vector<double>&)>;

  explicit Graph(bool recording = true) : recording_(recording) {
    static std::uint64_t counter = 0;
    serial_ = ++counter;
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Tape id for a tensor used as an op input: its own node if it was
  /// produced here, a (memoized) fresh leaf if it is a tracked parameter,
  /// and -1 for plain constants.
  int input_id(const Tensor& t) {
    if (!recording_) return -1;
    if (t.node >= 0) {
      if (t.graph_serial != serial_) {
        throw Error("tensor belongs to a different graph");
      }
      return t.node;
    }
    if (!t.requires_grad()) return -1;
    auto it = leaves_.find(t.payload_id());
    if (it != leaves_.end()) return it->second;
    int id = push_node("leaf", t.size(), {}, nullptr);
    leaves_.emplace(t.payload_id(), id);
    return id;
  }

  /// Registers `out` as the product of `op` and gives it grad tracking.
  void attach(Tensor& out, const char* op, std::vector<int> inputs,
              BackwardFn fn) {
    int id = push_node(op, out.size(), std::move(inputs), std::move(fn));
    out.node = id;
    out.graph_serial = serial_;
    out.set_requires_grad(true);
  }

  /// Accumulation buffer for a node, zero-initialized on first touch.
  std::vector<double>& grad_buffer(int node_id) {
    auto& buf = grads_[static_cast<std::size_t>(node_id)];
    if (buf.empty()) buf.assign(nodes_[static_cast<std::size_t>(node_id)].numel, 0.0);
    return buf;
  }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    }
    if (loss.node < 0 || loss.graph_serial != serial_) {
      throw Error("backward: loss is not a tracked output of this graph");
    }
    grads_.assign(nodes_.size(), {});
    grad_buffer(loss.node)[0] = 1.0;
    for (int i = loss.node; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty() || !node.backward) continue;
      node.backward(*this, g);
    }
    ran_backward_ = true;
  }

  bool has_grad(const Tensor& t) const {
    int id = lookup(t);
    return id >= 0 && !grads_[static_cast<std::size_t>(id)].empty();
  }

  /// Accumulated gradient of `t`; zeros if the loss never reached it.
  std::vector<double> grad(const Tensor& t) const {
    if (!ran_backward_) throw Error("grad: backward has not run");
    int id = lookup(t);
    if (id < 0) throw Error("grad: tensor is not tracked by this graph");
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    if (buf.empty()) return std::vector<double>(t.size(), 0.0);
    return buf;
  }

  /// Borrowed view of the gradient, nullptr when untouched.
  const std::vector<double>* grad_ptr(const Tensor& t) const {
    int id = lookup(t);
    if (id < 0) return nullptr;
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    return buf.empty() ? nullptr : &buf;
  }

 private:
  struct NodeRecord {
    const char* op;
    std::size_t numel;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  int lookup(const Tensor& t) const {
    if (t.node >= 0 && t.graph_serial == serial_) return t.node;
    auto it = leaves_.find(t.payload_id());
    return it == leaves_.end() ? -1 : it->second;
  }

  int push_node(const char* op, std::size_t numel, std::vector<int> inputs,
                BackwardFn fn) {
    nodes_.push_back({op, numel, std::move(inputs), std::move(fn)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool recording_;
  bool ran_backward_ = false;
  std::uint64_t serial_;
  std::vector<NodeRecord> nodes_;
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const void*, int> leaves_;
};

namespace detail {

inline void check_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

inline void check_same_shape(const char* op, const Tensor& a,
                             const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations. Every op computes its value
// eagerly and, when the graph is recording and an input is tracked, appends
// one tape record whose closure scatters the upstream gradient.
// ---------------------------------------------------------------------------

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  int ia = g.input_id(a), ib = g.input_id(b);
  if (ia >= 0 || ib >= 0) {
    g.attach(out, "add", {ia, ib},
             [ia, ib](Graph& gg, const std::vector<double>& up) {
               if (ia >= 0) detail::axpy(gg.grad_buffer(ia), up);
               if (ib >= 0) detail::axpy(gg.grad_buffer(ib), up);
             });
  }
  return out;
}

inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  int ia = g.input_id(a), ib = g.input_id(b);
  if (ia >= 0 || ib >= 0) {
    g.attach(out, "sub", {ia, ib},
             [ia, ib](Graph& gg, const std::vector<double>& up) {
               if (ia >= 0) detail::axpy(gg.grad_buffer(ia), up);
               if (ib >= 0) {
                 auto& db = gg.grad_buffer(ib);
                 for (std::size_t i = 0; i < up.size(); ++i) db[i] -= up[i];
               }
             });
  }
  return out;
}

inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  int ia = g.input_id(a), ib = g.input_id(b);
  if (ia >= 0 || ib >= 0) {
    auto va = a.values();
    auto vb = b.values();
    g.attach(out, "mul", {ia, ib},
             [ia, ib, va = std::move(va), vb = std::move(vb)](
                 Graph& gg, const std::vector<double>& up) {
               if (ia >= 0) {
                 auto& da = gg.grad_buffer(ia);
                 for (std::size_t i = 0; i < up.size(); ++i)
                   da[i] += up[i] * vb[i];
               }
               if (ib >= 0) {
                 auto& db = gg.grad_buffer(ib);
                 for (std::size_t i = 0; i < up.size(); ++i)
                   db[i] += up[i] * va[i];
               }
             });
  }
  return out;
}

inline Tensor scale(Graph& g, const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * c;
  int ia = g.input_id(a);
  if (ia >= 0) {
    g.attach(out, "scale", {ia},
             [ia, c](Graph& gg, const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (std::size_t i = 0; i < up.size(); ++i) da[i] += up[i] * c;
             });
  }
  return out;
}

inline Tensor add_scalar(Graph& g, const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) + c;
  int ia = g.input_id(a);
  if (ia >= 0) {
    g.attach(out, "add_scalar", {ia},
             [ia](Graph& gg, const std::vector<double>& up) {
               detail::axpy(gg.grad_buffer(ia), up);
             });
  }
  return out;
}

/// Broadcast add of a vector over the rows of a matrix.
inline Tensor add_rowvec(Graph& g, const Tensor& a, const Tensor& v) {
  detail::check_rank2("add_rowvec", a);
  std::size_t n = a.dim(0), d = a.dim(1);
  if (v.size() != d) {
    throw ShapeError("add_rowvec: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(v.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.at(r * d + c) = a.at(r * d + c) + v.at(c);
    }
  }
  int ia = g.input_id(a), iv = g.input_id(v);
  if (ia >= 0 || iv >= 0) {
    g.attach(out, "add_rowvec", {ia, iv},
             [ia, iv, n, d](Graph& gg, const std::vector<double>& up) {
               if (ia >= 0) detail::axpy(gg.grad_buffer(ia), up);
               if (iv >= 0) {
                 auto& dv = gg.grad_buffer(iv);
                 for (std::size_t r = 0; r < n; ++r)
                   for (std::size_t c = 0; c < d; ++c)
                     dv[c] += up[r * d + c];
               }
             });
  }
  return out;
}

namespace detail {

/// C += A(m,k) * B(k,n), row-major.
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double aik = arow[p];
      if (aik == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

/// C += A^T(m,k) * B(m,n) where A is (m,k): result (k,n).
inline void matmul_tn_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double v = arow[p];
      if (v == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += v * brow[j];
    }
  }
}

/// C += A(m,k) * B^T(n,k): result (m,n).
inline void matmul_nt_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace detail

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  detail::check_rank2("matmul", a);
  detail::check_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  detail::matmul_acc(a.data(), b.data(), out.data(), m, k, n);
  int ia = g.input_id(a), ib = g.input_id(b);
  if (ia >= 0 || ib >= 0) {
    auto va = a.values();
    auto vb = b.values();
    g.attach(out, "matmul", {ia, ib},
             [ia, ib, va = std::move(va), vb = std::move(vb), m, k, n](
                 Graph& gg, const std::vector<double>& up) {
               // dA = up * B^T, dB = A^T * up
               if (ia >= 0) {
                 detail::matmul_nt_acc(up.data(), vb.data(),
                                       gg.grad_buffer(ia).data(), m, n, k);
               }
               if (ib >= 0) {
                 detail::matmul_tn_acc(va.data(), up.data(),
                                       gg.grad_buffer(ib).data(), m, k, n);
               }
             });
  }
  return out;
}

inline Tensor transpose(Graph& g, const Tensor& a) {
  detail::check_rank2("transpose", a);
  std::size_t n = a.dim(0), m = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j * n + i) = a.at(i * m + j);
  int ia = g.input_id(a);
  if (ia >= 0) {
    g.attach(out, "transpose", {ia},
             [ia, n, m](Graph& gg, const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (std::size_t i = 0; i < n; ++i)
                 for (std::size_t j = 0; j < m; ++j)
                   da[i * m + j] += up[j * n + i];
             });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Dfn>
Tensor unary_op(Graph& g, const Tensor& a, const char* name, Fwd f, Dfn dfdy) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = f(a.at(i));
  int ia = g.input_id(a);
  if (ia >= 0) {
    // derivative expressed through input and output values
    auto vx = a.values();
    auto vy = out.values();
    g.attach(out, name, {ia},
             [ia, vx = std::move(vx), vy = std::move(vy), dfdy](
                 Graph& gg, const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (std::size_t i = 0; i < up.size(); ++i)
                 da[i] += up[i] * dfdy(vx[i], vy[i]);
             });
  }
  return out;
}

}  // namespace detail

inline Tensor relu(Graph& g, const Tensor& a) {
  return detail::unary_op(
      g, a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(Graph& g, const Tensor& a) {
  return detail::unary_op(
      g, a, "sigmoid",
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(Graph& g, const Tensor& a) {
  return detail::unary_op(
      g, a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sum(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  Tensor out = Tensor::scalar(s);
  int ia = g.input_id(a);
  if (ia >= 0) {
    g.attach(out, "sum", {ia},
             [ia](Graph& gg, const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (double& v : da) v += up[0];
             });
  }
  return out;
}

namespace detail {

struct AxisStrides {
  std::size_t outer, len, inner;
};

inline AxisStrides axis_strides(const Shape& shape, std::size_t axis,
                                const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(shape));
  }
  AxisStrides s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

/// Numerically stable softmax along `axis` (default: last).
inline Tensor softmax(Graph& g, const Tensor& a, std::size_t axis) {
  auto st = detail::axis_strides(a.shape(), axis, "softmax");
  Tensor out(a.shape());
  for (std::size_t o = 0; o < st.outer; ++o) {
    for (std::size_t in = 0; in < st.inner; ++in) {
      std::size_t base = o * st.len * st.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < st.len; ++k)
        mx = std::max(mx, a.at(base + k * st.inner));
      double z = 0.0;
      for (std::size_t k = 0; k < st.len; ++k) {
        double e = std::exp(a.at(base + k * st.inner) - mx);
        out.at(base + k * st.inner) = e;
        z += e;
      }
      for (std::size_t k = 0; k < st.len; ++k) out.at(base + k * st.inner) /= z;
    }
  }
  int ia = g.input_id(a);
  if (ia >= 0) {
    auto vy = out.values();
    g.attach(out, "softmax", {ia},
             [ia, vy = std::move(vy), st](Graph& gg,
                                          const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (std::size_t o = 0; o < st.outer; ++o) {
                 for (std::size_t in = 0; in < st.inner; ++in) {
                   std::size_t base = o * st.len * st.inner + in;
                   double dot = 0.0;
                   for (std::size_t k = 0; k < st.len; ++k) {
                     std::size_t idx = base + k * st.inner;
                     dot += up[idx] * vy[idx];
                   }
                   for (std::size_t k = 0; k < st.len; ++k) {
                     std::size_t idx = base + k * st.inner;
                     da[idx] += vy[idx] * (up[idx] - dot);
                   }
                 }
               }
             });
  }
  return out;
}

inline Tensor softmax(Graph& g, const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: undefined on rank-0 tensor");
  return softmax(g, a, a.rank() - 1);
}

/// Row-wise log-softmax over the last axis.
inline Tensor log_softmax(Graph& g, const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax: rank-0 tensor");
  auto st = detail::axis_strides(a.shape(), a.rank() - 1, "log_softmax");
  Tensor out(a.shape());
  for (std::size_t o = 0; o < st.outer; ++o) {
    std::size_t base = o * st.len;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < st.len; ++k) mx = std::max(mx, a.at(base + k));
    double z = 0.0;
    for (std::size_t k = 0; k < st.len; ++k)
      z += std::exp(a.at(base + k) - mx);
    double lse = mx + std::log(z);
    for (std::size_t k = 0; k < st.len; ++k) out.at(base + k) = a.at(base + k) - lse;
  }
  int ia = g.input_id(a);
  if (ia >= 0) {
    auto vy = out.values();
    g.attach(out, "log_softmax", {ia},
             [ia, vy = std::move(vy), st](Graph& gg,
                                          const std::vector<double>& up) {
               auto& da = gg.grad_buffer(ia);
               for (std::size_t o = 0; o < st.outer; ++o) {
                 std::size_t base = o * st.len;
                 double total = 0.0;
                 for (std::size_t k = 0; k < st.len; ++k) total += up[base + k];
                 for (std::size_t k = 0; k < st.len; ++k) {
                   da[base + k] += up[base + k] - std::exp(vy[base + k]) * total;
                 }
               }
             });
  }
  return out;
}

/// Per-vector standardization over the last axis followed by an affine map.
/// Population variance; `eps` keeps the zero-variance case finite.
inline Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-6) {
  if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 tensor");
  if (eps <= 0.0) throw ValueError("layer_norm: eps must be positive");
  std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) +
                     " entries, got " + shape_str(gain.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += px[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double dv = px[c] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      double h = (px[c] - mean) * is;
      xhat[r * d + c] = h;
      out.at(r * d + c) = gain.at(c) * h + bias.at(c);
    }
  }
  int ix = g.input_id(x), ig = g.input_id(gain), ib = g.input_id(bias);
  if (ix >= 0 || ig >= 0 || ib >= 0) {
    auto vgain = gain.values();
    g.attach(out, "layer_norm", {ix, ig, ib},
             [ix, ig, ib, d, rows, xhat = std::move(xhat),
              inv_std = std::move(inv_std), vgain = std::move(vgain)](
                 Graph& gg, const std::vector<double>& up) {
               if (ig >= 0) {
                 auto& dg = gg.grad_buffer(ig);
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < d; ++c)
                     dg[c] += up[r * d + c] * xhat[r * d + c];
               }
               if (ib >= 0) {
                 auto& db = gg.grad_buffer(ib);
                 for (std::size_t r = 0; r < rows; ++r)
                   for (std::size_t c = 0; c < d; ++c) db[c] += up[r * d + c];
               }
               if (ix >= 0) {
                 auto& dx = gg.grad_buffer(ix);
                 std::vector<double> gh(d);
                 for (std::size_t r = 0; r < rows; ++r) {
                   double mean_gh = 0.0, mean_ghh = 0.0;
                   for (std::size_t c = 0; c < d; ++c) {
                     gh[c] = up[r * d + c] * vgain[c];
                     mean_gh += gh[c];
                     mean_ghh += gh[c] * xhat[r * d + c];
                   }
                   mean_gh /= static_cast<double>(d);
                   mean_ghh /= static_cast<double>(d);
                   for (std::size_t c = 0; c < d; ++c) {
                     dx[r * d + c] += inv_std[r] *
                                      (gh[c] - mean_gh -
                                       xhat[r * d + c] * mean_ghh);
                   }
                 }
               }
             });
  }
  return out;
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability p and survivors are scaled by 1/(1-p); in inference mode the
/// input passes through untouched.
inline Tensor dropout(Graph& g, const Tensor& x, double p, bool training,
                      Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ValueError("dropout: p must lie in [0, 1), got " +
                     std::to_string(p));
  }
  if (!training || p == 0.0) {
    // Identity, but still a tape node so gradients flow.
    Tensor out(x.shape(), x.values());
    int ix = g.input_id(x);
    if (ix >= 0) {
      g.attach(out, "dropout", {ix},
               [ix](Graph& gg, const std::vector<double>& up) {
                 detail::axpy(gg.grad_buffer(ix), up);
               });
    }
    return out;
  }
  double keep = 1.0 - p;
  double inv_keep = 1.0 / keep;
  Tensor out(x.shape());
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : inv_keep;
    out.at(i) = x.at(i) * mask[i];
  }
  int ix = g.input_id(x);
  if (ix >= 0) {
    g.attach(out, "dropout", {ix},
             [ix, mask = std::move(mask)](Graph& gg,
                                          const std::vector<double>& up) {
               auto& dx = gg.grad_buffer(ix);
               for (std::size_t i = 0; i < up.size(); ++i)
                 dx[i] += up[i] * mask[i];
             });
  }
  return out;
}

/// Gathers rows of `table` by token id.
inline Tensor embedding_lookup(Graph& g, const Tensor& table,
                               const std::vector<TokenId>& ids) {
  detail::check_rank2("embedding_lookup", table);
  std::size_t v = table.dim(0), d = table.dim(1);
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ValueError("embedding_lookup: id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(v));
    }
  }
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double* src = table.data() + static_cast<std::size_t>(ids[r]) * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  int it = g.input_id(table);
  if (it >= 0) {
    g.attach(out, "embedding_lookup", {it},
             [it, ids, d](Graph& gg, const std::vector<double>& up) {
               auto& dt = gg.grad_buffer(it);
               for (std::size_t r = 0; r < ids.size(); ++r) {
                 double* dst = dt.data() + static_cast<std::size_t>(ids[r]) * d;
                 const double* src = up.data() + r * d;
                 for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
               }
             });
  }
  return out;
}

inline Tensor slice_cols(Graph& g, const Tensor& x, std::size_t c0,
                         std::size_t c1) {
  detail::check_rank2("slice_cols", x);
  std::size_t n = x.dim(0), d = x.dim(1);
  if (c0 >= c1 || c1 > d) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + shape_str(x.shape()));
  }
  std::size_t w = c1 - c0;
  Tensor out({n, w});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < w; ++c)
      out.at(r * w + c) = x.at(r * d + c0 + c);
  int ix = g.input_id(x);
  if (ix >= 0) {
    g.attach(out, "slice_cols", {ix},
             [ix, n, d, c0, w](Graph& gg, const std::vector<double>& up) {
               auto& dx = gg.grad_buffer(ix);
               for (std::size_t r = 0; r < n; ++r)
                 for (std::size_t c = 0; c < w; ++c)
                   dx[r * d + c0 + c] += up[r * w + c];
             });
  }
  return out;
}

inline Tensor slice_rows(Graph& g, const Tensor& x, std::size_t r0,
                         std::size_t r1) {
  detail::check_rank2("slice_rows", x);
  std::size_t n = x.dim(0), d = x.dim(1);
  if (r0 >= r1 || r1 > n) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + shape_str(x.shape()));
  }
  std::size_t h = r1 - r0;
  Tensor out({h, d});
  std::copy(x.data() + r0 * d, x.data() + r1 * d, out.data());
  int ix = g.input_id(x);
  if (ix >= 0) {
    g.attach(out, "slice_rows", {ix},
             [ix, d, r0, h](Graph& gg, const std::vector<double>& up) {
               auto& dx = gg.grad_buffer(ix);
               for (std::size_t i = 0; i < h * d; ++i)
                 dx[r0 * d + i] += up[i];
             });
  }
  return out;
}

inline Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor out(std::move(shape), x.values());
  int ix = g.input_id(x);
  if (ix >= 0) {
    g.attach(out, "reshape", {ix},
             [ix](Graph& gg, const std::vector<double>& up) {
               detail::axpy(gg.grad_buffer(ix), up);
             });
  }
  return out;
}

inline Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t n = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_rank2("concat_cols", p);
    if (p.dim(0) != n) {
      throw ShapeError("concat_cols: row mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.dim(1);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < w; ++c)
        out.at(r * total + off + c) = p.at(r * w + c);
    off += w;
  }
  std::vector<int> ids(parts.size());
  std::vector<std::size_t> widths(parts.size());
  bool any = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    ids[i] = g.input_id(parts[i]);
    widths[i] = parts[i].dim(1);
    any = any || ids[i] >= 0;
  }
  if (any) {
    g.attach(out, "concat_cols", ids,
             [ids, widths, n, total](Graph& gg,
                                     const std::vector<double>& up) {
               std::size_t off2 = 0;
               for (std::size_t i = 0; i < ids.size(); ++i) {
                 std::size_t w = widths[i];
                 if (ids[i] >= 0) {
                   auto& dp = gg.grad_buffer(ids[i]);
                   for (std::size_t r = 0; r < n; ++r)
                     for (std::size_t c = 0; c < w; ++c)
                       dp[r * w + c] += up[r * total + off2 + c];
                 }
                 off2 += w;
               }
             });
  }
  return out;
}

inline Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::size_t d = parts[0].dim(1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_rank2("concat_rows", p);
    if (p.dim(1) != d) {
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.dim(0);
  }
  Tensor out({total, d});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  std::vector<int> ids(parts.size());
  std::vector<std::size_t> sizes(parts.size());
  bool any = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    ids[i] = g.input_id(parts[i]);
    sizes[i] = parts[i].size();
    any = any || ids[i] >= 0;
  }
  if (any) {
    g.attach(out, "concat_rows", ids,
             [ids, sizes](Graph& gg, const std::vector<double>& up) {
               std::size_t off2 = 0;
               for (std::size_t i = 0; i < ids.size(); ++i) {
                 if (ids[i] >= 0) {
                   auto& dp = gg.grad_buffer(ids[i]);
                   for (std::size_t k = 0; k < sizes[i]; ++k)
                     dp[k] += up[off2 + k];
                 }
                 off2 += sizes[i];
               }
             });
  }
  return out;
}

// Boolean (query, key) attention mask; true means the key may be attended.
struct AttentionMask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> allowed;

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c, bool allow = true)
      : rows(r), cols(c), allowed(r * c, allow ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c]; }
  void set(std::size_t r, std::size_t c, bool v) {
    allowed[r * cols + c] = v ? 1 : 0;
  }

  /// Strictly causal: position t may attend to positions <= t.
  static AttentionMask causal(std::size_t n) {
    AttentionMask m(n, n, false);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
    return m;
  }

  static AttentionMask full(std::size_t r, std::size_t c) {
    return AttentionMask(r, c, true);
  }

  /// Marks a key position as padding: no query may attend to it.
  void block_key(std::size_t c) {
    for (std::size_t r = 0; r < rows; ++r) set(r, c, false);
  }
};

/// Softmax over rows where masked logits are treated as -inf. Rows with no
/// allowed key come out as all zeros.
inline Tensor masked_softmax(Graph& g, const Tensor& scores,
                             const AttentionMask& mask) {
  detail::check_rank2("masked_softmax", scores);
  std::size_t n = scores.dim(0), m = scores.dim(1);
  if (mask.rows != n || mask.cols != m) {
    throw ShapeError("masked_softmax: mask is " + std::to_string(mask.rows) +
                     "x" + std::to_string(mask.cols) + " but scores are " +
                     shape_str(scores.shape()));
  }
  Tensor out(scores.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c)
      if (mask.at(r, c)) mx = std::max(mx, scores.at(r * m + c));
    if (mx == -std::numeric_limits<double>::infinity()) {
      for (std::size_t c = 0; c < m; ++c) out.at(r * m + c) = 0.0;
      continue;
    }
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double e = mask.at(r, c) ? std::exp(scores.at(r * m + c) - mx) : 0.0;
      out.at(r * m + c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < m; ++c) out.at(r * m + c) /= z;
  }
  int is = g.input_id(scores);
  if (is >= 0) {
    auto vy = out.values();
    g.attach(out, "masked_softmax", {is},
             [is, vy = std::move(vy), n, m](Graph& gg,
                                            const std::vector<double>& up) {
               auto& ds = gg.grad_buffer(is);
               for (std::size_t r = 0; r < n; ++r) {
                 double dot = 0.0;
                 for (std::size_t c = 0; c < m; ++c)
                   dot += up[r * m + c] * vy[r * m + c];
                 for (std::size_t c = 0; c < m; ++c) {
                   std::size_t idx = r * m + c;
                   ds[idx] += vy[idx] * (up[idx] - dot);
                 }
               }
             });
  }
  return out;
}

}  // namespace headliner
