#pragma once

// Reverse-mode differentiable tensor engine. Tensors are immutable once
// produced by their op; graphs are DAGs of shared_ptr nodes walked in
// reverse topological order by backward().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace monorig {

// Validation failure of a documented contract (shapes, domains, config).
struct ContractViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace monorig

namespace monorig::diff {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same extent as data
  bool requires_grad = false;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node<T>&)> backward_fn;  // null for leaves
  const char* op = "leaf";

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s) { return full(std::move(s), T(0)); }

  static Tensor full(Shape s, T v) {
    auto n = std::make_shared<Node<T>>();
    n->data.assign(static_cast<size_t>(numel_of(s)), v);
    n->shape = std::move(s);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape s, std::vector<T> v, bool requires_grad = false) {
    require(numel_of(s) == static_cast<int64_t>(v.size()),
            "tensor: shape " + shape_str(s) + " does not match " + std::to_string(v.size()) + " values");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(s);
    n->data = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  // Leaf with requires_grad set; the unit optimizers iterate over.
  static Tensor param(Shape s, std::vector<T> v) { return from(std::move(s), std::move(v), true); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  const std::vector<T>& vec() const { return node_->data; }

  T value() const {
    require(numel() == 1, "tensor: value() on non-scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  NodePtr<T> node() const { return node_; }
  Node<T>* raw() const { return node_.get(); }

 private:
  NodePtr<T> node_;
};

namespace detail {

template <typename T>
NodePtr<T> make_node(Shape shape, std::vector<NodePtr<T>> parents, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->data.resize(static_cast<size_t>(numel_of(shape)));
  n->shape = std::move(shape);
  n->op = op;
  for (auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// Reverse post-order from the root: every consumer precedes its producers.
template <typename T>
std::vector<Node<T>*> topo_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  std::unordered_set<Node<T>*> seen;
  if (!root.raw()->requires_grad) return order;
  stack.push_back({root.raw(), 0});
  seen.insert(root.raw());
  while (!stack.empty()) {
    bool descended = false;
    {
      auto& [n, next] = stack.back();
      while (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) {
          stack.push_back({p, 0});
          descended = true;
          break;
        }
      }
    }
    if (!descended) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

// Backpropagate from a scalar root. Each reachable node's backward runs
// exactly once, after its gradient has been fully accumulated.
template <typename T>
void backward(const Tensor<T>& root) {
  require(root.numel() == 1, "backward: root must be scalar, got " + shape_str(root.shape()));
  auto order = topo_order(root);
  root.raw()->ensure_grad()[0] = T(1);
  for (Node<T>* n : order) {
    if (n->backward_fn) {
      n->ensure_grad();
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// broadcasting (numpy trailing-dim rules)

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    require(da == db || da == 1 || db == 1,
            "broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `in` aligned to the broadcast output shape, 0 on stretched dims.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto st = row_major_strides(in);
  std::vector<int64_t> r(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) r[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : st[i];
  return r;
}

// Odometer walk over `out_shape`, calling fn(out_index, a_offset, b_offset).
template <typename Fn>
void for_each_broadcast(const Shape& out_shape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Fn&& fn) {
  const int nd = static_cast<int>(out_shape.size());
  const int64_t n = numel_of(out_shape);
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      oa += sa[static_cast<size_t>(d)];
      ob += sb[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      oa -= sa[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      ob -= sb[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

// Sum `g` (shaped out_shape) into the gradient buffer of a parent with
// shape in_shape, reducing over broadcast dims.
template <typename T>
void reduce_into(const T* g, const Shape& out_shape, std::vector<T>& acc, const Shape& in_shape) {
  if (out_shape == in_shape) {
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    return;
  }
  auto sa = broadcast_strides(in_shape, out_shape);
  std::vector<int64_t> sz(out_shape.size(), 0);
  for_each_broadcast(out_shape, sa, sz, [&](int64_t i, int64_t oa, int64_t) { acc[static_cast<size_t>(oa)] += g[i]; });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops

template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Bwd bwd) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto n = detail::make_node<T>(out_shape, {a.node(), b.node()}, name);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = n->data.data();
  if (a.shape() == b.shape()) {
    const int64_t cnt = n->numel();
    for (int64_t i = 0; i < cnt; ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    auto sa = detail::broadcast_strides(a.shape(), out_shape);
    auto sb = detail::broadcast_strides(b.shape(), out_shape);
    detail::for_each_broadcast(out_shape, sa, sb,
                               [&](int64_t i, int64_t oa, int64_t ob) { po[i] = fwd(pa[oa], pb[ob]); });
  }
  if (n->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    n->backward_fn = [an, bn, bwd](Node<T>& self) {
      const Shape& os = self.shape;
      const T* g = self.grad.data();
      const T* pa2 = an->data.data();
      const T* pb2 = bn->data.data();
      const bool same = an->shape == bn->shape && an->shape == os;
      if (same) {
        const int64_t cnt = self.numel();
        for (int64_t i = 0; i < cnt; ++i) {
          T ga, gb;
          bwd(pa2[i], pb2[i], g[i], ga, gb);
          if (an->requires_grad) an->grad[static_cast<size_t>(i)] += ga;
          if (bn->requires_grad) bn->grad[static_cast<size_t>(i)] += gb;
        }
      } else {
        auto sa = detail::broadcast_strides(an->shape, os);
        auto sb = detail::broadcast_strides(bn->shape, os);
        detail::for_each_broadcast(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          T ga, gb;
          bwd(pa2[oa], pb2[ob], g[i], ga, gb);
          if (an->requires_grad) an->grad[static_cast<size_t>(oa)] += ga;
          if (bn->requires_grad) bn->grad[static_cast<size_t>(ob)] += gb;
        });
      }
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(a, b, "add", [](T x, T y) { return x + y; },
                      [](T, T, T g, T& ga, T& gb) { ga = g; gb = g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(a, b, "sub", [](T x, T y) { return x - y; },
                      [](T, T, T g, T& ga, T& gb) { ga = g; gb = -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(a, b, "mul", [](T x, T y) { return x * y; },
                      [](T x, T y, T g, T& ga, T& gb) { ga = g * y; gb = g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(a, b, "div", [](T x, T y) { return x / y; },
                      [](T x, T y, T g, T& ga, T& gb) { ga = g / y; gb = -g * x / (y * y); });
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, Fwd fwd, Bwd bwd) {
  auto n = detail::make_node<T>(a.shape(), {a.node()}, name);
  const T* pa = a.data();
  T* po = n->data.data();
  const int64_t cnt = n->numel();
  for (int64_t i = 0; i < cnt; ++i) po[i] = fwd(pa[i]);
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, bwd](Node<T>& self) {
      const T* g = self.grad.data();
      const T* x = an->data.data();
      const T* y = self.data.data();
      T* ga = an->grad.data();
      const int64_t c = self.numel();
      for (int64_t i = 0; i < c; ++i) ga[i] += bwd(x[i], y[i], g[i]);
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_op<T>(a, "neg", [](T x) { return -x; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_op<T>(a, "exp", [](T x) { return std::exp(x); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary_op<T>(a, "log", [](T x) { return std::log(x); }, [](T x, T, T g) { return g / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return unary_op<T>(a, "sqrt", [](T x) { return std::sqrt(x); },
                     [](T, T y, T g) { return g / (T(2) * y); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return unary_op<T>(a, "sin", [](T x) { return std::sin(x); }, [](T x, T, T g) { return g * std::cos(x); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return unary_op<T>(a, "cos", [](T x) { return std::cos(x); }, [](T x, T, T g) { return -g * std::sin(x); });
}

// Subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_op<T>(a, "abs", [](T x) { return std::abs(x); },
                     [](T x, T, T g) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>(a, "sigmoid",
                     [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
                     [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& a) {
  return unary_op<T>(a, "elu", [](T x) { return x > T(0) ? x : std::expm1(x); },
                     [](T x, T y, T g) { return x > T(0) ? g : g * (y + T(1)); });
}

// Gradient passes through strictly inside (lo, hi), zero elsewhere.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary_op<T>(a, "clamp", [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                     [lo, hi](T x, T, T g) { return (x > lo && x < hi) ? g : T(0); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return unary_op<T>(a, "scale", [c](T x) { return c * x; }, [c](T, T, T g) { return c * g; });
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
  return unary_op<T>(a, "add_const", [c](T x) { return x + c; }, [](T, T, T g) { return g; });
}

// Constant copy, cut out of the gradient graph.
template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
  auto n = std::make_shared<Node<T>>();
  n->shape = a.shape();
  n->data = a.node()->data;
  n->op = "detach";
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto n = detail::make_node<T>({1}, {a.node()}, "sum");
  const T* pa = a.data();
  T acc = 0;
  const int64_t cnt = a.numel();
  for (int64_t i = 0; i < cnt; ++i) acc += pa[i];
  n->data[0] = acc;
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an](Node<T>& self) {
      const T g = self.grad[0];
      T* ga = an->grad.data();
      const int64_t c = an->numel();
      for (int64_t i = 0; i < c; ++i) ga[i] += g;
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Sum over one axis. keepdim keeps a size-1 extent in its place.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis, bool keepdim = false) {
  const Shape& s = a.shape();
  require(axis >= 0 && axis < a.ndim(), "sum_axis: axis out of range");
  Shape out;
  for (int i = 0; i < a.ndim(); ++i) {
    if (i == axis) {
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(s[static_cast<size_t>(i)]);
    }
  }
  if (out.empty()) out.push_back(1);
  int64_t outer = 1, inner = 1;
  const int64_t k = s[static_cast<size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= s[static_cast<size_t>(i)];
  auto n = detail::make_node<T>(out, {a.node()}, "sum_axis");
  const T* pa = a.data();
  T* po = n->data.data();
  std::fill(n->data.begin(), n->data.end(), T(0));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < k; ++j)
      for (int64_t i = 0; i < inner; ++i) po[o * inner + i] += pa[(o * k + j) * inner + i];
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, outer, inner, k](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < k; ++j)
          for (int64_t i = 0; i < inner; ++i) ga[(o * k + j) * inner + i] += g[o * inner + i];
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis, bool keepdim = false) {
  return scale(sum_axis(a, axis, keepdim), T(1) / static_cast<T>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// movement ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
  require(numel_of(s) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(s) + " changes element count");
  auto n = detail::make_node<T>(s, {a.node()}, "reshape");
  n->data = a.node()->data;
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an](Node<T>& self) {
      T* ga = an->grad.data();
      const T* g = self.grad.data();
      const int64_t c = self.numel();
      for (int64_t i = 0; i < c; ++i) ga[i] += g[i];
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, const std::vector<int>& perm) {
  require(static_cast<int>(perm.size()) == a.ndim(), "transpose: perm rank mismatch");
  const Shape& s = a.shape();
  Shape out(s.size());
  for (size_t i = 0; i < perm.size(); ++i) out[i] = s[static_cast<size_t>(perm[i])];
  auto in_st = row_major_strides(s);
  auto n = detail::make_node<T>(out, {a.node()}, "transpose");
  // stride of the input walked in output order
  std::vector<int64_t> st(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) st[i] = in_st[static_cast<size_t>(perm[i])];
  const T* pa = a.data();
  T* po = n->data.data();
  std::vector<int64_t> zero(out.size(), 0);
  detail::for_each_broadcast(out, st, zero, [&](int64_t i, int64_t oa, int64_t) { po[i] = pa[oa]; });
  if (n->requires_grad) {
    auto an = a.node();
    auto out_shape = out;
    n->backward_fn = [an, st, out_shape](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      std::vector<int64_t> zero2(out_shape.size(), 0);
      detail::for_each_broadcast(out_shape, st, zero2,
                                 [&](int64_t i, int64_t oa, int64_t) { ga[oa] += g[i]; });
    };
  }
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), "concat: empty input");
  const Shape& s0 = parts[0].shape();
  require(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range");
  Shape out = s0;
  int total = 0;
  for (const auto& p : parts) {
    require(p.ndim() == static_cast<int>(s0.size()), "concat: rank mismatch");
    for (int i = 0; i < p.ndim(); ++i)
      require(i == axis || p.dim(i) == s0[static_cast<size_t>(i)], "concat: extent mismatch off-axis");
    total += p.dim(axis);
  }
  out[static_cast<size_t>(axis)] = total;
  std::vector<NodePtr<T>> ps;
  for (const auto& p : parts) ps.push_back(p.node());
  auto n = detail::make_node<T>(out, ps, "concat");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < out.size(); ++i) inner *= out[i];
  T* po = n->data.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t block = p.dim(axis) * inner;
    const T* pa = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pa + o * block, pa + (o + 1) * block, po + o * (total * inner) + off);
    off += block;
  }
  if (n->requires_grad) {
    std::vector<int64_t> blocks;
    for (const auto& p : parts) blocks.push_back(p.dim(axis) * inner);
    n->backward_fn = [blocks, outer, inner, total](Node<T>& self) {
      const T* g = self.grad.data();
      int64_t off2 = 0;
      for (size_t pi = 0; pi < self.parents.size(); ++pi) {
        auto& par = self.parents[pi];
        if (par->requires_grad) {
          T* ga = par->grad.data();
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = g + o * (static_cast<int64_t>(total) * inner) + off2;
            T* dst = ga + o * blocks[pi];
            for (int64_t i = 0; i < blocks[pi]; ++i) dst[i] += src[i];
          }
        }
        off2 += blocks[pi];
      }
    };
  }
  return Tensor<T>(n);
}

// Rectangular crop; backward scatters into the source region (zero pad).
template <typename T>
Tensor<T> crop(const Tensor<T>& a, const std::vector<int>& offset, const Shape& size) {
  require(static_cast<int>(offset.size()) == a.ndim() && size.size() == offset.size(),
          "crop: rank mismatch");
  for (int i = 0; i < a.ndim(); ++i)
    require(offset[static_cast<size_t>(i)] >= 0 && offset[static_cast<size_t>(i)] + size[static_cast<size_t>(i)] <= a.dim(i),
            "crop: window exceeds input extent");
  auto n = detail::make_node<T>(size, {a.node()}, "crop");
  auto in_st = row_major_strides(a.shape());
  std::vector<int64_t> zero(size.size(), 0);
  int64_t base = 0;
  for (size_t i = 0; i < offset.size(); ++i) base += in_st[i] * offset[i];
  const T* pa = a.data();
  T* po = n->data.data();
  detail::for_each_broadcast(size, in_st, zero, [&](int64_t i, int64_t oa, int64_t) { po[i] = pa[base + oa]; });
  if (n->requires_grad) {
    auto an = a.node();
    auto sz = size;
    n->backward_fn = [an, in_st, base, sz](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      std::vector<int64_t> zero2(sz.size(), 0);
      detail::for_each_broadcast(sz, in_st, zero2,
                                 [&](int64_t i, int64_t oa, int64_t) { ga[base + oa] += g[i]; });
    };
  }
  return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// spatial resampling on [H, W, C]

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& a, int factor) {
  require(a.ndim() == 3 && factor >= 1, "upsample_nearest: want [H,W,C]");
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const int oh = h * factor, ow = w * factor;
  auto n = detail::make_node<T>({oh, ow, c}, {a.node()}, "upsample_nearest");
  const T* pa = a.data();
  T* po = n->data.data();
  for (int y = 0; y < oh; ++y) {
    const int sy = y / factor;
    for (int x = 0; x < ow; ++x) {
      const int sx = x / factor;
      const T* src = pa + (static_cast<int64_t>(sy) * w + sx) * c;
      T* dst = po + (static_cast<int64_t>(y) * ow + x) * c;
      for (int k = 0; k < c; ++k) dst[k] = src[k];
    }
  }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, h, w, c, factor, oh, ow](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      for (int y = 0; y < oh; ++y) {
        const int sy = y / factor;
        for (int x = 0; x < ow; ++x) {
          const int sx = x / factor;
          const T* src = g + (static_cast<int64_t>(y) * ow + x) * c;
          T* dst = ga + (static_cast<int64_t>(sy) * w + sx) * c;
          for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    };
  }
  return Tensor<T>(n);
}

// Bilinear upsample, half-pixel centers, edge clamped.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, int factor) {
  require(a.ndim() == 3 && factor >= 1, "upsample_bilinear: want [H,W,C]");
  const int h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const int oh = h * factor, ow = w * factor;
  auto n = detail::make_node<T>({oh, ow, c}, {a.node()}, "upsample_bilinear");

  struct Tap {
    int i0, i1;
    T w1;  // weight of i1; i0 gets 1-w1
  };
  auto taps = [](int out_n, int in_n, int f) {
    std::vector<Tap> t(static_cast<size_t>(out_n));
    for (int i = 0; i < out_n; ++i) {
      T src = (static_cast<T>(i) + T(0.5)) / static_cast<T>(f) - T(0.5);
      src = std::min(std::max(src, T(0)), static_cast<T>(in_n - 1));
      int i0 = static_cast<int>(std::floor(src));
      if (i0 > in_n - 2) i0 = std::max(in_n - 2, 0);
      T w1 = src - static_cast<T>(i0);
      t[static_cast<size_t>(i)] = {i0, std::min(i0 + 1, in_n - 1), w1};
    }
    return t;
  };
  auto ty = taps(oh, h, factor);
  auto tx = taps(ow, w, factor);
  const T* pa = a.data();
  T* po = n->data.data();
  for (int y = 0; y < oh; ++y) {
    const Tap& a_y = ty[static_cast<size_t>(y)];
    for (int x = 0; x < ow; ++x) {
      const Tap& a_x = tx[static_cast<size_t>(x)];
      const T* r00 = pa + (static_cast<int64_t>(a_y.i0) * w + a_x.i0) * c;
      const T* r01 = pa + (static_cast<int64_t>(a_y.i0) * w + a_x.i1) * c;
      const T* r10 = pa + (static_cast<int64_t>(a_y.i1) * w + a_x.i0) * c;
      const T* r11 = pa + (static_cast<int64_t>(a_y.i1) * w + a_x.i1) * c;
      T* dst = po + (static_cast<int64_t>(y) * ow + x) * c;
      const T wy1 = a_y.w1, wy0 = T(1) - wy1, wx1 = a_x.w1, wx0 = T(1) - wx1;
      for (int k = 0; k < c; ++k)
        dst[k] = wy0 * (wx0 * r00[k] + wx1 * r01[k]) + wy1 * (wx0 * r10[k] + wx1 * r11[k]);
    }
  }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, ty, tx, w, c, oh, ow](Node<T>& self) {
      const T* g = self.grad.data();
      T* ga = an->grad.data();
      for (int y = 0; y < oh; ++y) {
        const Tap& a_y = ty[static_cast<size_t>(y)];
        for (int x = 0; x < ow; ++x) {
          const Tap& a_x = tx[static_cast<size_t>(x)];
          const T wy1 = a_y.w1, wy0 = T(1) - wy1, wx1 = a_x.w1, wx0 = T(1) - wx1;
          const T* src = g + (static_cast<int64_t>(y) * ow + x) * c;
          T* d00 = ga + (static_cast<int64_t>(a_y.i0) * w + a_x.i0) * c;
          T* d01 = ga + (static_cast<int64_t>(a_y.i0) * w + a_x.i1) * c;
          T* d10 = ga + (static_cast<int64_t>(a_y.i1) * w + a_x.i0) * c;
          T* d11 = ga + (static_cast<int64_t>(a_y.i1) * w + a_x.i1) * c;
          for (int k = 0; k < c; ++k) {
            d00[k] += wy0 * wx0 * src[k];
            d01[k] += wy0 * wx1 * src[k];
            d10[k] += wy1 * wx0 * src[k];
            d11[k] += wy1 * wx1 * src[k];
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

}  // namespace monorig::diff
