// Reverse-mode autodiff tape on dense row-major tensors.
//
// Tensors are shared handles onto tape nodes. Ops record parents and a
// backward closure only while grad mode is on and some input requires
// gradients; inference paths build no graph. backward() walks the tape in
// reverse topological order from a scalar root.
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "semcom/common.hpp"

namespace semcom::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
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

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
  }
};

}  // namespace detail

// RAII guard: disables graph construction (inference / oracle paths).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename Real>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) {
    auto n = std::make_shared<detail::Node<Real>>();
    n->value.assign(shape_size(shape), Real(0));
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, Real v) {
    auto n = std::make_shared<detail::Node<Real>>();
    n->value.assign(shape_size(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<Real> values) {
    if (shape_size(shape) != values.size())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(Real v) { return from({1}, {v}); }

  // Leaf parameter; grads accumulate here across backward calls.
  static Tensor parameter(Shape shape, std::vector<Real> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }

  std::span<const Real> values() const { return node_->value; }
  // Direct mutation is only legal on leaves between tape builds (optimizer).
  std::vector<Real>& raw_values() { return node_->value; }

  Real item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  const std::vector<Real>& grad() const {
    static const std::vector<Real> empty;
    return node_->grad.empty() && node_->value.empty() ? empty : node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  NodePtr node() const { return node_; }

  // Reverse pass from a scalar. seed lets callers scale a whole tape
  // (e.g. 1/batch for accumulated means).
  void backward(Real seed = Real(1)) const {
    if (size() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order topological sort over grad-requiring ancestry.
    std::vector<detail::Node<Real>*> order;
    std::unordered_set<detail::Node<Real>*> visited;
    std::vector<std::pair<detail::Node<Real>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        detail::Node<Real>* p = n->parents[idx].get();
        ++idx;
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->ensure_grad();
    node_->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<Real>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename Real>
std::shared_ptr<Node<Real>> make_result(Shape shape, std::vector<Real> value,
                                        std::initializer_list<Tensor<Real>> inputs,
                                        std::function<void(Node<Real>&)> backward) {
  auto n = std::make_shared<Node<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_mode_flag()) {
    bool needs = false;
    for (const auto& t : inputs)
      if (t.requires_grad()) needs = true;
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward_fn = std::move(backward);
    }
  }
  return n;
}

template <typename Real>
void accumulate(Node<Real>& dst, const std::vector<Real>& g) {
  dst.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "add");
  std::vector<Real> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<Real>& n) {
        if (an->requires_grad) detail::accumulate(*an, n.grad);
        if (bn->requires_grad) detail::accumulate(*bn, n.grad);
      }));
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "sub");
  std::vector<Real> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<Real>& n) {
        if (an->requires_grad) detail::accumulate(*an, n.grad);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
        }
      }));
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "mul");
  std::vector<Real> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<Real>& n) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
        }
      }));
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  std::vector<Real> v(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * c;
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a}, [an, c](detail::Node<Real>& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
      }));
}

template <typename Real, typename Fwd, typename Dif>
Tensor<Real> unary_op(const Tensor<Real>& a, Fwd f, Dif df) {
  std::vector<Real> v(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(av[i]);
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a}, [an, df](detail::Node<Real>& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          an->grad[i] += n.grad[i] * df(an->value[i], n.value[i]);
      }));
}

template <typename Real>
Tensor<Real> tanh_t(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid_t(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> relu_t(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Tensor<Real> leaky_relu_t(const Tensor<Real>& a, Real slope = Real(0.01)) {
  return unary_op(
      a, [slope](Real x) { return x > Real(0) ? x : slope * x; },
      [slope](Real x, Real) { return x > Real(0) ? Real(1) : slope; });
}

template <typename Real>
Tensor<Real> rsqrt_t(const Tensor<Real>& a) {
  return unary_op(
      a, [](Real x) { return Real(1) / std::sqrt(x); },
      [](Real, Real y) { return Real(-0.5) * y * y * y; });
}

// Multiply a tensor by a scalar-shaped tensor (broadcast).
template <typename Real>
Tensor<Real> mul_by_scalar(const Tensor<Real>& a, const Tensor<Real>& s) {
  if (s.size() != 1) throw DimensionError("mul_by_scalar: scalar operand must have size 1");
  Real sv = s.values()[0];
  std::vector<Real> v(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * sv;
  auto an = a.node(), sn = s.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a, s}, [an, sn](detail::Node<Real>& nd) {
        Real sv2 = sn->value[0];
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < nd.grad.size(); ++i) an->grad[i] += nd.grad[i] * sv2;
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          Real acc = 0;
          for (std::size_t i = 0; i < nd.grad.size(); ++i) acc += nd.grad[i] * an->value[i];
          sn->grad[0] += acc;
        }
      }));
}

template <typename Real>
Tensor<Real> softplus_t(const Tensor<Real>& a) {
  return unary_op(
      a,
      [](Real x) {
        // overflow-safe log(1+e^x)
        return x > Real(20) ? x : std::log1p(std::exp(x));
      },
      [](Real x, Real) { return Real(1) / (Real(1) + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<Real> v(a.values().begin(), a.values().end());
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      std::move(shape), std::move(v), {a},
      [an](detail::Node<Real>& n) { detail::accumulate(*an, n.grad); }));
}

// 1-D concatenation
template <typename Real>
Tensor<Real> concat_vec(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::vector<Real> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  auto an = a.node(), bn = b.node();
  std::size_t na = a.size();
  return Tensor<Real>(detail::make_result<Real>(
      {a.size() + b.size()}, std::move(v), {a, b}, [an, bn, na](detail::Node<Real>& n) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < na; ++i) an->grad[i] += n.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = na; i < n.grad.size(); ++i) bn->grad[i - na] += n.grad[i];
        }
      }));
}

// 1-D slice [i0, i1)
template <typename Real>
Tensor<Real> slice_vec(const Tensor<Real>& a, std::size_t i0, std::size_t i1) {
  if (a.rank() != 1 || i1 > a.size() || i0 > i1)
    throw DimensionError("slice_vec: bad range on shape " + shape_str(a.shape()));
  std::vector<Real> v(a.values().begin() + i0, a.values().begin() + i1);
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      {i1 - i0}, std::move(v), {a}, [an, i0](detail::Node<Real>& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i0 + i] += n.grad[i];
      }));
}

// Row i of a [R,C] matrix as a 1-D tensor
template <typename Real>
Tensor<Real> row(const Tensor<Real>& m, std::size_t i) {
  if (m.rank() != 2 || i >= m.dim(0))
    throw DimensionError("row: index " + std::to_string(i) + " out of " + shape_str(m.shape()));
  std::size_t c = m.dim(1);
  std::vector<Real> v(m.values().begin() + i * c, m.values().begin() + (i + 1) * c);
  auto mn = m.node();
  return Tensor<Real>(detail::make_result<Real>(
      {c}, std::move(v), {m}, [mn, i, c](detail::Node<Real>& n) {
        mn->ensure_grad();
        for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += n.grad[j];
      }));
}

// Stack equal-length 1-D tensors into [T, C]
template <typename Real>
Tensor<Real> stack_rows(const std::vector<Tensor<Real>>& rows) {
  if (rows.empty()) return Tensor<Real>::zeros({0, 0});
  std::size_t c = rows[0].size();
  std::vector<Real> v;
  v.reserve(rows.size() * c);
  bool needs = false;
  for (const auto& r : rows) {
    if (r.size() != c) throw DimensionError("stack_rows: ragged rows");
    v.insert(v.end(), r.values().begin(), r.values().end());
    if (r.requires_grad()) needs = true;
  }
  auto n = std::make_shared<detail::Node<Real>>();
  n->shape = {rows.size(), c};
  n->value = std::move(v);
  if (grad_enabled() && needs) {
    n->requires_grad = true;
    std::vector<typename Tensor<Real>::NodePtr> parents;
    parents.reserve(rows.size());
    for (const auto& r : rows) parents.push_back(r.node());
    n->parents.assign(parents.begin(), parents.end());
    n->backward_fn = [c](detail::Node<Real>& nd) {
      for (std::size_t i = 0; i < nd.parents.size(); ++i) {
        auto& p = *nd.parents[i];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (std::size_t j = 0; j < c; ++j) p.grad[j] += nd.grad[i * c + j];
      }
    };
  }
  return Tensor<Real>(std::move(n));
}

// Columns [c0, c1) of a [R,C] matrix
template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& m, std::size_t c0, std::size_t c1) {
  if (m.rank() != 2 || c1 > m.dim(1) || c0 > c1)
    throw DimensionError("slice_cols: bad range on shape " + shape_str(m.shape()));
  std::size_t r = m.dim(0), c = m.dim(1), w = c1 - c0;
  std::vector<Real> v(r * w);
  auto mv = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = mv[i * c + c0 + j];
  auto mn = m.node();
  return Tensor<Real>(detail::make_result<Real>(
      {r, w}, std::move(v), {m}, [mn, r, c, c0, w](detail::Node<Real>& n) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) mn->grad[i * c + c0 + j] += n.grad[i * w + j];
      }));
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty input");
  std::size_t r = parts[0].dim(0), total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != r) throw DimensionError("concat_cols: row mismatch");
    total += p.dim(1);
  }
  std::vector<Real> v(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p.dim(1);
    auto pv = p.values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) v[i * total + off + j] = pv[i * w + j];
    off += w;
  }
  auto n = std::make_shared<detail::Node<Real>>();
  n->shape = {r, total};
  n->value = std::move(v);
  bool needs = false;
  for (const auto& p : parts)
    if (p.requires_grad()) needs = true;
  if (grad_enabled() && needs) {
    n->requires_grad = true;
    for (const auto& p : parts) n->parents.push_back(p.node());
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.dim(1));
    n->backward_fn = [r, total, widths](detail::Node<Real>& nd) {
      std::size_t off2 = 0;
      for (std::size_t k = 0; k < nd.parents.size(); ++k) {
        auto& p = *nd.parents[k];
        std::size_t w = widths[k];
        if (p.requires_grad) {
          p.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) p.grad[i * w + j] += nd.grad[i * total + off2 + j];
        }
        off2 += w;
      }
    };
  }
  return Tensor<Real>(std::move(n));
}

template <typename Real>
Tensor<Real> transpose2d(const Tensor<Real>& m) {
  if (m.rank() != 2) throw DimensionError("transpose2d: need rank 2, got " + shape_str(m.shape()));
  std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<Real> v(r * c);
  auto mv = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = mv[i * c + j];
  auto mn = m.node();
  return Tensor<Real>(detail::make_result<Real>(
      {c, r}, std::move(v), {m}, [mn, r, c](detail::Node<Real>& n) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += n.grad[j * r + i];
      }));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
  std::vector<Real> v(m * n2, Real(0));
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      Real aip = av[i * k + p];
      if (aip == Real(0)) continue;
      const Real* brow = &bv[p * n2];
      Real* vrow = &v[i * n2];
      for (std::size_t j = 0; j < n2; ++j) vrow[j] += aip * brow[j];
    }
  auto an = a.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      {m, n2}, std::move(v), {a, b}, [an, bn, m, k, n2](detail::Node<Real>& nd) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              Real acc = 0;
              const Real* g = &nd.grad[i * n2];
              const Real* brow = &bn->value[p * n2];
              for (std::size_t j = 0; j < n2; ++j) acc += g[j] * brow[j];
              an->grad[i * k + p] += acc;
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              Real aip = an->value[i * k + p];
              if (aip == Real(0)) continue;
              const Real* g = &nd.grad[i * n2];
              Real* brow = &bn->grad[p * n2];
              for (std::size_t j = 0; j < n2; ++j) brow[j] += aip * g[j];
            }
        }
      }));
}

// y = x * W^T + b, x: [rows, in] (or [in]), W: [out, in], b: [out]
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  std::size_t in = w.dim(1), out = w.dim(0);
  std::size_t rows;
  bool vec_input = (x.rank() == 1);
  if (vec_input) {
    if (x.size() != in)
      throw DimensionError("linear: input size " + std::to_string(x.size()) + " != " + std::to_string(in));
    rows = 1;
  } else if (x.rank() == 2) {
    if (x.dim(1) != in)
      throw DimensionError("linear: input cols " + std::to_string(x.dim(1)) + " != " + std::to_string(in));
    rows = x.dim(0);
  } else {
    throw DimensionError("linear: rank must be 1 or 2, got " + shape_str(x.shape()));
  }
  if (b.size() != out) throw DimensionError("linear: bias size mismatch");

  std::vector<Real> v(rows * out);
  auto xv = x.values(), wv = w.values(), bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = &xv[r * in];
    Real* vr = &v[r * out];
    for (std::size_t o = 0; o < out; ++o) {
      const Real* wr = &wv[o * in];
      Real acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      vr[o] = acc;
    }
  }
  Shape out_shape = vec_input ? Shape{out} : Shape{rows, out};
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      std::move(out_shape), std::move(v), {x, w, b},
      [xn, wn, bn, rows, in, out](detail::Node<Real>& nd) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* g = &nd.grad[r * out];
            Real* gx = &xn->grad[r * in];
            for (std::size_t o = 0; o < out; ++o) {
              Real go = g[o];
              if (go == Real(0)) continue;
              const Real* wr = &wn->value[o * in];
              for (std::size_t i = 0; i < in; ++i) gx[i] += go * wr[i];
            }
          }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            const Real* g = &nd.grad[r * out];
            const Real* xr = &xn->value[r * in];
            for (std::size_t o = 0; o < out; ++o) {
              Real go = g[o];
              if (go == Real(0)) continue;
              Real* gw = &wn->grad[o * in];
              for (std::size_t i = 0; i < in; ++i) gw[i] += go * xr[i];
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out; ++o) bn->grad[o] += nd.grad[r * out + o];
        }
      }));
}

// y[j] = sum_i a[i] * m[i, j]   (attention context)
template <typename Real>
Tensor<Real> vecmat(const Tensor<Real>& a, const Tensor<Real>& m) {
  if (a.rank() != 1 || m.rank() != 2 || a.size() != m.dim(0))
    throw DimensionError("vecmat: " + shape_str(a.shape()) + " x " + shape_str(m.shape()));
  std::size_t t = m.dim(0), c = m.dim(1);
  std::vector<Real> v(c, Real(0));
  auto av = a.values(), mv = m.values();
  for (std::size_t i = 0; i < t; ++i) {
    Real ai = av[i];
    if (ai == Real(0)) continue;
    const Real* mr = &mv[i * c];
    for (std::size_t j = 0; j < c; ++j) v[j] += ai * mr[j];
  }
  auto an = a.node(), mn = m.node();
  return Tensor<Real>(detail::make_result<Real>(
      {c}, std::move(v), {a, m}, [an, mn, t, c](detail::Node<Real>& nd) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < t; ++i) {
            Real acc = 0;
            const Real* mr = &mn->value[i * c];
            for (std::size_t j = 0; j < c; ++j) acc += nd.grad[j] * mr[j];
            an->grad[i] += acc;
          }
        }
        if (mn->requires_grad) {
          mn->ensure_grad();
          for (std::size_t i = 0; i < t; ++i) {
            Real ai = an->value[i];
            if (ai == Real(0)) continue;
            Real* gm = &mn->grad[i * c];
            for (std::size_t j = 0; j < c; ++j) gm[j] += ai * nd.grad[j];
          }
        }
      }));
}

// Broadcast-add a row vector to every row of a matrix.
template <typename Real>
Tensor<Real> add_rowwise(const Tensor<Real>& m, const Tensor<Real>& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.size())
    throw DimensionError("add_rowwise: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
  std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<Real> out(r * c);
  auto mv = m.values(), vv = v.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + vv[j];
  auto mn = m.node(), vn = v.node();
  return Tensor<Real>(detail::make_result<Real>(
      {r, c}, std::move(out), {m, v}, [mn, vn, r, c](detail::Node<Real>& nd) {
        if (mn->requires_grad) detail::accumulate(*mn, nd.grad);
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) vn->grad[j] += nd.grad[i * c + j];
        }
      }));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real acc = 0;
  for (Real x : a.values()) acc += x;
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      {1}, {acc}, {a}, [an](detail::Node<Real>& nd) {
        an->ensure_grad();
        for (auto& g : an->grad) g += nd.grad[0];
      }));
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.size() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), Real(1) / Real(a.size()));
}

// ---------------------------------------------------------------------------
// Softmax family (last dim = rows of [R,C]; 1-D treated as a single row)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  std::size_t r = a.rank() == 1 ? 1 : a.dim(0);
  std::size_t c = a.rank() == 1 ? a.size() : a.dim(1);
  std::vector<Real> v(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* in = &av[i * c];
    Real* out = &v[i * c];
    Real mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] /= z;
  }
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a}, [an, r, c](detail::Node<Real>& nd) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const Real* y = &nd.value[i * c];
          const Real* g = &nd.grad[i * c];
          Real dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
          Real* gx = &an->grad[i * c];
          for (std::size_t j = 0; j < c; ++j) gx[j] += y[j] * (g[j] - dot);
        }
      }));
}

template <typename Real>
Tensor<Real> logsoftmax_rows(const Tensor<Real>& a) {
  std::size_t r = a.rank() == 1 ? 1 : a.dim(0);
  std::size_t c = a.rank() == 1 ? a.size() : a.dim(1);
  std::vector<Real> v(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* in = &av[i * c];
    Real* out = &v[i * c];
    Real mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    Real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    Real lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[j] = in[j] - lz;
  }
  auto an = a.node();
  return Tensor<Real>(detail::make_result<Real>(
      a.shape(), std::move(v), {a}, [an, r, c](detail::Node<Real>& nd) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const Real* y = &nd.value[i * c];
          const Real* g = &nd.grad[i * c];
          Real gs = 0;
          for (std::size_t j = 0; j < c; ++j) gs += g[j];
          Real* gx = &an->grad[i * c];
          for (std::size_t j = 0; j < c; ++j) gx[j] += g[j] - std::exp(y[j]) * gs;
        }
      }));
}

// log_probs[t, targets[t]] gathered into a vector (cross-entropy helper).
template <typename Real>
Tensor<Real> pick_rows(const Tensor<Real>& logp, const std::vector<std::size_t>& targets) {
  if (logp.rank() != 2 || targets.size() != logp.dim(0))
    throw ContractError("pick_rows: need one target per row");
  std::size_t c = logp.dim(1);
  std::vector<Real> v(targets.size());
  auto lv = logp.values();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= c) throw ContractError("pick_rows: target id out of range");
    v[t] = lv[t * c + targets[t]];
  }
  auto ln = logp.node();
  auto tg = targets;
  return Tensor<Real>(detail::make_result<Real>(
      {targets.size()}, std::move(v), {logp}, [ln, tg, c](detail::Node<Real>& nd) {
        ln->ensure_grad();
        for (std::size_t t = 0; t < tg.size(); ++t) ln->grad[t * c + tg[t]] += nd.grad[t];
      }));
}

// Embedding rows for a list of ids: table [V, d] -> [T, d]
template <typename Real>
Tensor<Real> embedding_rows(const Tensor<Real>& table, const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) throw DimensionError("embedding_rows: table must be [V,d]");
  std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<Real> out(ids.size() * d);
  auto tv = table.values();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= v) throw InputError("embedding id " + std::to_string(ids[t]) + " out of range " + std::to_string(v));
    std::copy(tv.begin() + ids[t] * d, tv.begin() + (ids[t] + 1) * d, out.begin() + t * d);
  }
  auto tn = table.node();
  auto idc = ids;
  return Tensor<Real>(detail::make_result<Real>(
      {ids.size(), d}, std::move(out), {table}, [tn, idc, d](detail::Node<Real>& nd) {
        tn->ensure_grad();
        for (std::size_t t = 0; t < idc.size(); ++t)
          for (std::size_t j = 0; j < d; ++j) tn->grad[idc[t] * d + j] += nd.grad[t * d + j];
      }));
}

template <typename Real>
Tensor<Real> embedding_row(const Tensor<Real>& table, std::size_t id) {
  Tensor<Real> m = embedding_rows(table, std::vector<std::size_t>{id});
  return reshape(m, {table.dim(1)});
}

// Row i repeated counts[i] times: [R, C] -> [sum(counts), C]
template <typename Real>
Tensor<Real> repeat_rows(const Tensor<Real>& m, const std::vector<std::size_t>& counts) {
  if (m.rank() != 2 || counts.size() != m.dim(0))
    throw DimensionError("repeat_rows: need one count per row");
  std::size_t c = m.dim(1), total = 0;
  for (auto n : counts) total += n;
  std::vector<Real> v(total * c);
  auto mv = m.values();
  std::size_t out_row = 0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    for (std::size_t r = 0; r < counts[i]; ++r, ++out_row)
      std::copy(mv.begin() + i * c, mv.begin() + (i + 1) * c, v.begin() + out_row * c);
  auto mn = m.node();
  auto cnt = counts;
  return Tensor<Real>(detail::make_result<Real>(
      {total, c}, std::move(v), {m}, [mn, cnt, c](detail::Node<Real>& nd) {
        mn->ensure_grad();
        std::size_t row2 = 0;
        for (std::size_t i = 0; i < cnt.size(); ++i)
          for (std::size_t r = 0; r < cnt[i]; ++r, ++row2)
            for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += nd.grad[row2 * c + j];
      }));
}

}  // namespace semcom::nn
