#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gatiaa/error.hpp"
#include "gatiaa/tensor.hpp"

namespace gatiaa {

// A trainable tensor owned by a layer. `grad` accumulates across backward
// sweeps until the optimizer (or the caller) zeroes it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

namespace detail {

// c(m,n) += a(m,k) * b(k,n)
template <typename T>
void gemm_nn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T(0)) continue;
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c(m,k) += a(m,n) * b(k,n)^T
template <typename T>
void gemm_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = pb + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      pc[i * k + p] += acc;
    }
  }
}

// c(k,n) += a(m,k)^T * b(m,n)
template <typename T>
void gemm_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T(0)) continue;
      T* crow = pc + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records one forward pass. Each node keeps its value and a closure that
// pushes its output gradient onto its inputs; `backward` replays those in
// reverse creation order, which is a valid topological order by construction.
template <typename T>
class Tape {
 public:
  class Sweep {
   public:
    explicit Sweep(Tape& tape) : tape_(tape), grads_(tape.nodes_.size()) {}

    bool wants(std::size_t id) const { return tape_.nodes_[id].requires_grad; }
    const Tensor<T>& value(std::size_t id) const { return tape_.nodes_[id].value; }

    Tensor<T>& at(std::size_t id) {
      auto& g = grads_[id];
      if (g.empty()) g = Tensor<T>(tape_.nodes_[id].value.shape());
      return g;
    }

    void add(std::size_t id, const Tensor<T>& delta) {
      if (!wants(id)) return;
      detail::add_into(at(id), delta);
    }

   private:
    friend class Tape;
    Tape& tape_;
    std::vector<Tensor<T>> grads_;
  };

  using BackwardFn = std::function<void(Sweep&, const Tensor<T>& out_grad)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}); }

  Var<T> variable(Tensor<T> value) { return push("variable", std::move(value), true, {}); }

  // Registers a parameter as a leaf. Repeated registration of the same
  // parameter returns the same node.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    Var<T> v = push("parameter:" + p.name, p.value, true, {});
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var<T> record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool req = false;
    for (const auto& in : inputs) {
      check_owner(op, in);
      req = req || nodes_[in.id()].requires_grad;
    }
    return push(std::move(op), std::move(value), req, req ? std::move(fn) : BackwardFn{});
  }

  Var<T> record(std::string op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool req = false;
    for (const auto& in : inputs) {
      check_owner(op, in);
      req = req || nodes_[in.id()].requires_grad;
    }
    return push(std::move(op), std::move(value), req, req ? std::move(fn) : BackwardFn{});
  }

  // Accumulates d(loss)/d(node) into every node's `grad`. Calling twice
  // without zero_grad() doubles the stored gradients.
  void backward(const Var<T>& loss) {
    check_owner("backward", loss);
    const auto& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw ShapeError("backward", "loss must be scalar, got shape " + shape_string(lv.shape()));
    Sweep sweep(*this);
    sweep.at(loss.id()).fill(T(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.requires_grad || sweep.grads_[id].empty()) continue;
      if (node.backward) node.backward(sweep, sweep.grads_[id]);
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (sweep.grads_[id].empty()) continue;
      detail::add_into(nodes_[id].grad, sweep.grads_[id]);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad.fill(T(0));
  }

  // Adds each parameter leaf's gradient into its Parameter::grad.
  void accumulate_parameter_grads() {
    for (auto& n : nodes_) {
      if (n.param == nullptr) continue;
      if (n.param->grad.shape() != n.value.shape()) n.param->grad = Tensor<T>(n.value.shape());
      detail::add_into(n.param->grad, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  Var<T> push(std::string op, Tensor<T> value, bool req, BackwardFn fn) {
    if (value.empty()) throw ShapeError(op, "empty tensor");
    Node n;
    n.op = std::move(op);
    n.grad = Tensor<T>(value.shape());
    n.value = std::move(value);
    n.requires_grad = req;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owner(const std::string& op, const Var<T>& v) const {
    if (v.tape_ != this) throw ValueError(op + ": operand belongs to a different tape");
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->node(id_).grad;
}

// ---------------------------------------------------------------------------
// Primitive operations. All operate on rank-2 tensors.

namespace detail {

template <typename T>
void require_matrix(const std::string& op, const Var<T>& a) {
  if (a.value().rank() != 2) throw ShapeError(op, "expected a matrix, got shape " + shape_string(a.shape()));
}

template <typename T>
void require_same(const std::string& op, const Var<T>& a, const Var<T>& b) {
  require_matrix(op, a);
  require_matrix(op, b);
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename T, typename F, typename D>
Var<T> unary(const std::string& op, const Var<T>& a, F f, D df) {
  require_matrix(op, a);
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(out), {a}, [ia, df](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    const auto& x = s.value(ia);
    auto& ga = s.at(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.cols());
  detail::gemm_nn(a.value(), b.value(), out);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib](auto& s, const Tensor<T>& g) {
    if (s.wants(ia)) detail::gemm_nt(g, s.value(ib), s.at(ia));
    if (s.wants(ib)) detail::gemm_tn(s.value(ia), g, s.at(ib));
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same("add", a, b);
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](auto& s, const Tensor<T>& g) {
    s.add(ia, g);
    s.add(ib, g);
  });
}

template <typename T>
Var<T> subtract(const Var<T>& a, const Var<T>& b) {
  detail::require_same("subtract", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("subtract", std::move(out), {a, b}, [ia, ib](auto& s, const Tensor<T>& g) {
    s.add(ia, g);
    if (s.wants(ib)) {
      auto& gb = s.at(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> multiply(const Var<T>& a, const Var<T>& b) {
  detail::require_same("multiply", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("multiply", std::move(out), {a, b}, [ia, ib](auto& s, const Tensor<T>& g) {
    if (s.wants(ia)) {
      auto& ga = s.at(ia);
      const auto& bv = s.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (s.wants(ib)) {
      auto& gb = s.at(ib);
      const auto& av = s.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return detail::unary<T>("scale", a, [factor](T x) { return x * factor; }, [factor](T) { return factor; });
}

// a(m,n) + row(1,n) broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::require_matrix("add_row", a);
  detail::require_matrix("add_row", row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row", a.shape(), row.shape());
  Tensor<T> out = a.value();
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += row.value()[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record("add_row", std::move(out), {a, row}, [ia, ir, m, n](auto& s, const Tensor<T>& g) {
    s.add(ia, g);
    if (s.wants(ir)) {
      auto& gr = s.at(ir);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g(i, j);
    }
  });
}

// Pairwise sum of two column vectors: out(i,j) = a(i) + b(j).
template <typename T>
Var<T> outer_add(const Var<T>& a, const Var<T>& b) {
  detail::require_matrix("outer_add", a);
  detail::require_matrix("outer_add", b);
  if (a.cols() != 1 || b.cols() != 1) throw ShapeError("outer_add", a.shape(), b.shape());
  const std::size_t m = a.rows(), n = b.rows();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a.value()[i] + b.value()[j];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("outer_add", std::move(out), {a, b}, [ia, ib, m, n](auto& s, const Tensor<T>& g) {
    if (s.wants(ia)) {
      auto& ga = s.at(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i] += g(i, j);
    }
    if (s.wants(ib)) {
      auto& gb = s.at(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  detail::require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(out), {a}, [ia, m, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(j, i);
  });
}

// Concatenation along axis 0 (stack rows) or axis 1 (stack columns).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no operands");
  if (axis > 1) throw ShapeError("concat", "axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix("concat", p);
  std::size_t rows = 0, cols = 0;
  if (axis == 0) {
    cols = parts[0].cols();
    for (const auto& p : parts) {
      if (p.cols() != cols) throw ShapeError("concat", parts[0].shape(), p.shape());
      rows += p.rows();
    }
  } else {
    rows = parts[0].rows();
    for (const auto& p : parts) {
      if (p.rows() != rows) throw ShapeError("concat", parts[0].shape(), p.shape());
      cols += p.cols();
    }
  }
  Tensor<T> out = Tensor<T>::matrix(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    if (axis == 0) {
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + off * cols);
      off += v.rows();
    } else {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
      off += v.cols();
    }
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts, [ids, offsets, axis, cols, rows](auto& s, const Tensor<T>& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!s.wants(ids[k])) continue;
          auto& gp = s.at(ids[k]);
          if (axis == 0) {
            const std::size_t base = offsets[k] * cols;
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[base + i];
          } else {
            const std::size_t w = gp.cols();
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, offsets[k] + j);
          }
        }
      });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  detail::require_matrix("slice_rows", a);
  if (count == 0 || begin + count > a.rows())
    throw ShapeError("slice_rows", "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                       ") out of range for shape " + shape_string(a.shape()));
  const std::size_t n = a.cols();
  const auto src = a.value().data().subspan(begin * n, count * n);
  Tensor<T> out({count, n}, std::vector<T>(src.begin(), src.end()));
  const std::size_t ia = a.id();
  return a.tape().record("slice_rows", std::move(out), {a}, [ia, begin, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

namespace detail {

// Softmax over each row restricted to entries with mask != 0. Fully masked
// rows produce zeros.
template <typename T>
Var<T> softmax_impl(const std::string& op, const Var<T>& a, const std::vector<std::uint8_t>* mask) {
  require_matrix(op, a);
  const std::size_t m = a.rows(), n = a.cols();
  if (mask && mask->size() != m * n)
    throw ShapeError(op, a.shape(), Shape{mask->size()});
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const auto& x = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)[i * n + j]) mx = std::max(mx, x(i, j));
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      out(i, j) = std::exp(x(i, j) - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= z;
  }
  const std::size_t ia = a.id(), iy = a.tape().size();
  return a.tape().record(op, std::move(out), {a}, [ia, iy, m, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    const auto& y = s.value(iy);
    auto& ga = s.at(ia);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> row_softmax(const Var<T>& a) {
  return detail::softmax_impl<T>("row_softmax", a, nullptr);
}

// Entries with mask == 0 are treated as -inf.
template <typename T>
Var<T> masked_row_softmax(const Var<T>& a, const std::vector<std::uint8_t>& mask) {
  return detail::softmax_impl<T>("masked_row_softmax", a, &mask);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary<T>(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  for (T v : a.value().data())
    if (!(v > T(0))) throw ValueError("log: non-positive input " + std::to_string(v));
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

// max(a, lo); the gradient passes only where a > lo.
template <typename T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  return detail::unary<T>(
      "clamp_min", a, [lo](T x) { return x > lo ? x : lo; }, [lo](T x) { return x > lo ? T(1) : T(0); });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  detail::require_matrix("sum", a);
  T acc = 0;
  for (T v : a.value().data()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(acc), {a}, [ia](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// Row-group reduction: out(g, :) = sum of rows r with segment[r] == g.
template <typename T>
Var<T> segment_sum(const Var<T>& a, std::span<const std::size_t> segment, std::size_t groups) {
  detail::require_matrix("segment_sum", a);
  if (segment.size() != a.rows()) throw ShapeError("segment_sum", a.shape(), Shape{segment.size()});
  const std::size_t n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(groups, n);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    if (segment[r] >= groups) throw ShapeError("segment_sum", "segment id out of range");
    for (std::size_t j = 0; j < n; ++j) out(segment[r], j) += a.value()(r, j);
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  const std::size_t ia = a.id();
  return a.tape().record("segment_sum", std::move(out), {a}, [ia, seg, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga(r, j) += g(seg[r], j);
  });
}

// Like segment_sum but divided by each group's row count; empty groups give zeros.
template <typename T>
Var<T> segment_mean(const Var<T>& a, std::span<const std::size_t> segment, std::size_t groups) {
  detail::require_matrix("segment_mean", a);
  if (segment.size() != a.rows()) throw ShapeError("segment_mean", a.shape(), Shape{segment.size()});
  std::vector<T> inv(groups, T(0));
  for (std::size_t r : segment) {
    if (r >= groups) throw ShapeError("segment_mean", "segment id out of range");
    inv[r] += T(1);
  }
  for (auto& c : inv) c = c > T(0) ? T(1) / c : T(0);
  const std::size_t n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(groups, n);
  for (std::size_t r = 0; r < segment.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) out(segment[r], j) += a.value()(r, j) * inv[segment[r]];
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  const std::size_t ia = a.id();
  return a.tape().record("segment_mean", std::move(out), {a}, [ia, seg, inv, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga(r, j) += g(seg[r], j) * inv[seg[r]];
  });
}

// out(r, :) = a(index[r], :). Broadcasts per-group rows back onto members.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> index) {
  detail::require_matrix("gather_rows", a);
  if (index.empty()) throw ShapeError("gather_rows", "empty index");
  const std::size_t n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) throw ShapeError("gather_rows", "row index out of range for shape " + shape_string(a.shape()));
    const auto src = a.value().row(index[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return a.tape().record("gather_rows", std::move(out), {a}, [ia, idx, n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga(idx[r], j) += g(r, j);
  });
}

// Multiplies row r by the constant factors[r].
template <typename T>
Var<T> scale_rows(const Var<T>& a, std::vector<T> factors) {
  detail::require_matrix("scale_rows", a);
  if (factors.size() != a.rows()) throw ShapeError("scale_rows", a.shape(), Shape{factors.size()});
  const std::size_t n = a.cols();
  Tensor<T> out = a.value();
  for (std::size_t r = 0; r < factors.size(); ++r)
    for (std::size_t j = 0; j < n; ++j) out(r, j) *= factors[r];
  const std::size_t ia = a.id();
  return a.tape().record("scale_rows", std::move(out), {a}, [ia, f = std::move(factors), n](auto& s, const Tensor<T>& g) {
    if (!s.wants(ia)) return;
    auto& ga = s.at(ia);
    for (std::size_t r = 0; r < f.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga(r, j) += g(r, j) * f[r];
  });
}

}  // namespace gatiaa
