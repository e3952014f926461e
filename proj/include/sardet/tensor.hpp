#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "sardet/common.hpp"
#include "sardet/kernels.hpp"
#include "sardet/rng.hpp"

namespace sardet {

// Dense tensor with reverse-mode autodiff. Define-by-run: every op records
// its parents and a backward closure on the produced node; backward() walks
// the graph once in reverse topological order and then frees it. Tensors are
// cheap shared handles to nodes. Production code uses TensorT<float>; the
// gradient-check suite instantiates the same code with double.
template <class T>
class TensorT {
  struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
  };

 public:
  TensorT() : n_(std::make_shared<Node>()) {}

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.n_->shape = std::move(shape);
    t.n_->value.assign(static_cast<size_t>(shape_numel(t.n_->shape)), T(0));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(std::vector<int> shape, T v, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    std::fill(t.n_->value.begin(), t.n_->value.end(), v);
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<T> data,
                           bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    TensorT t;
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(T v) { return from_data({}, {v}); }

  static TensorT randn(std::vector<int> shape, Rng& rng, T stddev = T(1),
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (T& v : t.n_->value) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return n_->shape; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  bool requires_grad() const { return n_->requires_grad; }
  bool is_leaf() const { return n_->leaf; }

  std::span<T> data() { return {n_->value.data(), n_->value.size()}; }
  std::span<const T> data() const { return {n_->value.data(), n_->value.size()}; }

  // Gradient buffer; allocated (zeroed) on demand.
  std::span<T> grad() {
    ensure_grad(*n_);
    return {n_->grad.data(), n_->grad.size()};
  }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() { std::fill(n_->grad.begin(), n_->grad.end(), T(0)); }

  T item() const {
    if (numel() != 1) throw ContractError("item: tensor with " + std::to_string(numel()) +
                                          " elements is not a scalar");
    return n_->value[0];
  }

  // Reverse pass from a scalar. Populates grad on every requires_grad leaf
  // reachable from this node, then releases the graph; successive backward
  // calls on fresh graphs accumulate into leaf grads.
  void backward() const {
    if (numel() != 1) throw ContractError("backward: loss must be scalar, got " +
                                          shape_str(n_->shape));
    std::vector<Node*> order;
    topo_sort(n_.get(), order);
    ensure_grad(*n_);
    n_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward_fn) {
        if (node->grad.empty()) ensure_grad(*node);
        node->backward_fn(*node);
      }
    }
    for (Node* node : order) {
      if (!node->leaf) {
        node->grad.clear();
        node->grad.shrink_to_fit();
      }
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }

  // --- internal: op construction helpers -----------------------------------

  struct OpBuilder {
    TensorT out;
    bool track = false;
    void depends_on(const TensorT& p) {
      if (p.n_->requires_grad) track = true;
      out.n_->parents.push_back(p.n_);
    }
    void finish(std::function<void(Node&)> fn) {
      if (track) {
        out.n_->requires_grad = true;
        out.n_->leaf = false;
        out.n_->backward_fn = std::move(fn);
      } else {
        out.n_->parents.clear();
      }
    }
  };

  static OpBuilder make_op(std::vector<int> shape) {
    OpBuilder b;
    b.out = zeros(std::move(shape));
    return b;
  }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  }

  Node* node() const { return n_.get(); }
  static std::span<T> grad_of(const std::shared_ptr<Node>& n) {
    ensure_grad(*n);
    return {n->grad.data(), n->grad.size()};
  }
  static std::span<const T> value_of(const std::shared_ptr<Node>& n) {
    return {n->value.data(), n->value.size()};
  }
  static bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

 private:
  static void topo_sort(Node* root, std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> n_;
};

namespace detail {

// Broadcast iteration state for binary elementwise ops (numpy alignment from
// the right; extents must match or be 1).
struct Broadcast {
  std::vector<int> shape;           // output shape
  std::vector<int64_t> sa, sb;      // operand strides per output axis (0 where broadcast)
  int64_t n = 1;

  Broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    const size_t rank = std::max(a.size(), b.size());
    shape.resize(rank);
    sa.assign(rank, 0);
    sb.assign(rank, 0);
    std::vector<int64_t> stra(a.size()), strb(b.size());
    int64_t acc = 1;
    for (size_t i = a.size(); i-- > 0;) {
      stra[i] = acc;
      acc *= a[i];
    }
    acc = 1;
    for (size_t i = b.size(); i-- > 0;) {
      strb[i] = acc;
      acc *= b[i];
    }
    for (size_t i = 0; i < rank; ++i) {
      const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
      const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
      if (da != db && da != 1 && db != 1)
        throw DimensionError("broadcast: incompatible extents at axis " + std::to_string(i) +
                             ": " + shape_str(a) + " vs " + shape_str(b));
      shape[i] = std::max(da, db);
      if (da != 1) sa[i] = stra[i - (rank - a.size())];
      if (db != 1) sb[i] = strb[i - (rank - b.size())];
      n *= shape[i];
    }
  }

  // Calls f(out_index, a_index, b_index) for every output element in order.
  template <class F>
  void for_each(F&& f) const {
    const size_t rank = shape.size();
    std::vector<int> idx(rank, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t o = 0; o < n; ++o) {
      f(o, oa, ob);
      for (size_t i = rank; i-- > 0;) {
        ++idx[i];
        oa += sa[i];
        ob += sb[i];
        if (idx[i] < shape[i]) break;
        oa -= static_cast<int64_t>(idx[i]) * sa[i];
        ob -= static_cast<int64_t>(idx[i]) * sb[i];
        idx[i] = 0;
      }
    }
  }
};

}  // namespace detail

// --- elementwise -----------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::Broadcast bc(a.shape(), b.shape());
  auto op = TensorT<T>::make_op(bc.shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = op.out.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < bc.n; ++i) ov[i] = av[i] + bv[i];
  } else {
    bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] + bv[ib]; });
  }
  op.depends_on(a);
  op.depends_on(b);
  op.finish([bc](auto& node) {
    auto g = node.grad;
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    if (TensorT<T>::wants_grad(pa)) {
      auto ga = TensorT<T>::grad_of(pa);
      bc.for_each([&](int64_t o, int64_t ia, int64_t) { ga[ia] += g[o]; });
    }
    if (TensorT<T>::wants_grad(pb)) {
      auto gb = TensorT<T>::grad_of(pb);
      bc.for_each([&](int64_t o, int64_t, int64_t ib) { gb[ib] += g[o]; });
    }
  });
  return op.out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::Broadcast bc(a.shape(), b.shape());
  auto op = TensorT<T>::make_op(bc.shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = op.out.data();
  bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] * bv[ib]; });
  op.depends_on(a);
  op.depends_on(b);
  op.finish([bc](auto& node) {
    auto g = node.grad;
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    auto av = TensorT<T>::value_of(pa);
    auto bv = TensorT<T>::value_of(pb);
    if (TensorT<T>::wants_grad(pa)) {
      auto ga = TensorT<T>::grad_of(pa);
      bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { ga[ia] += g[o] * bv[ib]; });
    }
    if (TensorT<T>::wants_grad(pb)) {
      auto gb = TensorT<T>::grad_of(pb);
      bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { gb[ib] += g[o] * av[ia]; });
    }
  });
  return op.out;
}

template <class T>
TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b) {
  detail::Broadcast bc(a.shape(), b.shape());
  auto op = TensorT<T>::make_op(bc.shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = op.out.data();
  bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { ov[o] = av[ia] / bv[ib]; });
  op.depends_on(a);
  op.depends_on(b);
  op.finish([bc](auto& node) {
    auto g = node.grad;
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    auto av = TensorT<T>::value_of(pa);
    auto bv = TensorT<T>::value_of(pb);
    if (TensorT<T>::wants_grad(pa)) {
      auto ga = TensorT<T>::grad_of(pa);
      bc.for_each([&](int64_t o, int64_t ia, int64_t ib) { ga[ia] += g[o] / bv[ib]; });
    }
    if (TensorT<T>::wants_grad(pb)) {
      auto gb = TensorT<T>::grad_of(pb);
      bc.for_each([&](int64_t o, int64_t ia, int64_t ib) {
        gb[ib] -= g[o] * av[ia] / (bv[ib] * bv[ib]);
      });
    }
  });
  return op.out;
}

// Elementwise minimum/maximum; gradient routes to the winning operand (ties
// go to the first).
template <class T>
TensorT<T> extremum(const TensorT<T>& a, const TensorT<T>& b, bool take_max) {
  detail::Broadcast bc(a.shape(), b.shape());
  auto op = TensorT<T>::make_op(bc.shape);
  auto av = a.data();
  auto bv = b.data();
  auto ov = op.out.data();
  bc.for_each([&](int64_t o, int64_t ia, int64_t ib) {
    ov[o] = take_max ? (bv[ib] > av[ia] ? bv[ib] : av[ia]) : (bv[ib] < av[ia] ? bv[ib] : av[ia]);
  });
  op.depends_on(a);
  op.depends_on(b);
  op.finish([bc, take_max](auto& node) {
    auto g = node.grad;
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    auto av = TensorT<T>::value_of(pa);
    auto bv = TensorT<T>::value_of(pb);
    const bool wa = TensorT<T>::wants_grad(pa);
    const bool wb = TensorT<T>::wants_grad(pb);
    auto ga = wa ? TensorT<T>::grad_of(pa) : std::span<T>{};
    auto gb = wb ? TensorT<T>::grad_of(pb) : std::span<T>{};
    bc.for_each([&](int64_t o, int64_t ia, int64_t ib) {
      const bool b_wins = take_max ? bv[ib] > av[ia] : bv[ib] < av[ia];
      if (b_wins) {
        if (wb) gb[ib] += g[o];
      } else {
        if (wa) ga[ia] += g[o];
      }
    });
  });
  return op.out;
}

template <class T>
TensorT<T> minimum(const TensorT<T>& a, const TensorT<T>& b) {
  return extremum(a, b, false);
}
template <class T>
TensorT<T> maximum(const TensorT<T>& a, const TensorT<T>& b) {
  return extremum(a, b, true);
}

template <class T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * c;
  op.depends_on(a);
  op.finish([c](auto& node) {
    auto g = node.grad;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[i] * c;
  });
  return op.out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + c;
  op.depends_on(a);
  op.finish([](auto& node) {
    auto g = node.grad;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
  });
  return op.out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return add(a, mul_scalar(b, T(-1)));
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
  op.depends_on(a);
  op.finish([](auto& node) {
    auto g = node.grad;
    auto pv = TensorT<T>::value_of(node.parents[0]);
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i)
      if (pv[i] > T(0)) gp[i] += g[i];
  });
  return op.out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = T(1) / (T(1) + std::exp(-av[i]));
  op.depends_on(a);
  op.finish([](auto& node) {
    auto g = node.grad;
    const auto& y = node.value;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[i] * y[i] * (T(1) - y[i]);
  });
  return op.out;
}

template <class T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t i = 0; i < a.numel(); ++i) ov[i] = std::clamp(av[i], lo, hi);
  op.depends_on(a);
  op.finish([lo, hi](auto& node) {
    auto g = node.grad;
    auto pv = TensorT<T>::value_of(node.parents[0]);
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i)
      if (pv[i] > lo && pv[i] < hi) gp[i] += g[i];
  });
  return op.out;
}

// Softmax along the last axis.
template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
  if (a.shape().empty()) throw DimensionError("softmax_lastdim: rank-0 input");
  const int d = a.shape().back();
  const int64_t rows = a.numel() / d;
  auto op = TensorT<T>::make_op(a.shape());
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * d;
    T* y = ov.data() + r * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T sum = 0;
    for (int i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int i = 0; i < d; ++i) y[i] /= sum;
  }
  op.depends_on(a);
  op.finish([d, rows](auto& node) {
    auto g = node.grad;
    const auto& y = node.value;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (int64_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * d;
      const T* gr = g.data() + r * d;
      T dot = 0;
      for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
      for (int i = 0; i < d; ++i) gp[r * d + i] += yr[i] * (gr[i] - dot);
    }
  });
  return op.out;
}

// --- reductions / shape ------------------------------------------------------

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
  auto op = TensorT<T>::make_op({});
  auto av = a.data();
  T acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += av[i];
  op.out.data()[0] = acc;
  op.depends_on(a);
  op.finish([](auto& node) {
    const T g = node.grad[0];
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i) gp[i] += g;
  });
  return op.out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  auto op = TensorT<T>::make_op(std::move(shape));
  auto av = a.data();
  auto ov = op.out.data();
  std::copy(av.begin(), av.end(), ov.begin());
  op.depends_on(a);
  op.finish([](auto& node) {
    auto g = node.grad;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
  });
  return op.out;
}

// out[..., j] = a[..., start + j]
template <class T>
TensorT<T> slice_lastdim(const TensorT<T>& a, int start, int len) {
  if (a.shape().empty()) throw DimensionError("slice_lastdim: rank-0 input");
  const int d = a.shape().back();
  if (start < 0 || len < 1 || start + len > d)
    throw DimensionError("slice_lastdim: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of axis extent " +
                         std::to_string(d));
  std::vector<int> shape = a.shape();
  shape.back() = len;
  const int64_t rows = a.numel() / d;
  auto op = TensorT<T>::make_op(std::move(shape));
  auto av = a.data();
  auto ov = op.out.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < len; ++j) ov[r * len + j] = av[r * d + start + j];
  op.depends_on(a);
  op.finish([d, rows, start, len](auto& node) {
    auto g = node.grad;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < len; ++j) gp[r * d + start + j] += g[r * len + j];
  });
  return op.out;
}

// Row selection on the leading axis; duplicate indices accumulate in backward.
template <class T>
TensorT<T> gather_rows(const TensorT<T>& a, std::vector<int> idx) {
  if (a.shape().empty()) throw DimensionError("gather_rows: rank-0 input");
  const int rows = a.shape()[0];
  const int64_t rowlen = a.numel() / rows;
  for (int i : idx)
    if (i < 0 || i >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(i) + " out of " +
                           std::to_string(rows) + " rows");
  std::vector<int> shape = a.shape();
  shape[0] = static_cast<int>(idx.size());
  auto op = TensorT<T>::make_op(std::move(shape));
  auto av = a.data();
  auto ov = op.out.data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(av.data() + idx[r] * rowlen, rowlen, ov.data() + r * rowlen);
  op.depends_on(a);
  op.finish([idx = std::move(idx), rowlen](auto& node) {
    auto g = node.grad;
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < rowlen; ++j) gp[idx[r] * rowlen + j] += g[r * rowlen + j];
  });
  return op.out;
}

// Assembles rows of several parts into one [M, rowlen] tensor: part p's row r
// lands at row_of[p][r]. Every output row must be covered exactly once.
template <class T>
TensorT<T> stack_rows(const std::vector<TensorT<T>>& parts,
                      const std::vector<std::vector<int>>& row_of, int m) {
  if (parts.empty() || parts.size() != row_of.size())
    throw ContractError("stack_rows: parts/row_of mismatch");
  int64_t rowlen = -1;
  int64_t covered = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (s.empty() || s[0] != static_cast<int>(row_of[p].size()))
      throw DimensionError("stack_rows: part " + std::to_string(p) + " rows vs index list");
    const int64_t rl = parts[p].numel() / std::max(1, s[0]);
    if (rowlen < 0) rowlen = rl;
    if (s[0] > 0 && rl != rowlen) throw DimensionError("stack_rows: inconsistent row length");
    covered += s[0];
  }
  if (covered != m) throw ContractError("stack_rows: rows covered != m");
  auto op = TensorT<T>::make_op({m, static_cast<int>(rowlen)});
  auto ov = op.out.data();
  for (size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].data();
    for (size_t r = 0; r < row_of[p].size(); ++r)
      std::copy_n(pv.data() + r * rowlen, rowlen, ov.data() + row_of[p][r] * rowlen);
  }
  for (const auto& part : parts) op.depends_on(part);
  op.finish([row_of, rowlen](auto& node) {
    auto g = node.grad;
    for (size_t p = 0; p < node.parents.size(); ++p) {
      if (!TensorT<T>::wants_grad(node.parents[p])) continue;
      auto gp = TensorT<T>::grad_of(node.parents[p]);
      for (size_t r = 0; r < row_of[p].size(); ++r)
        for (int64_t j = 0; j < rowlen; ++j)
          gp[r * rowlen + j] += g[row_of[p][r] * rowlen + j];
    }
  });
  return op.out;
}

// --- neural-net ops ----------------------------------------------------------

// x [B,Fin] * w [Fout,Fin]^T + b
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2)
    throw DimensionError("linear: expected rank-2 input and weight");
  const int m = x.shape()[0], fin = x.shape()[1], fout = w.shape()[0];
  if (w.shape()[1] != fin)
    throw DimensionError("linear: inner extents disagree: input " + shape_str(x.shape()) +
                         " weight " + shape_str(w.shape()));
  if (b.numel() != fout)
    throw DimensionError("linear: bias extent " + std::to_string(b.numel()) + " != " +
                         std::to_string(fout));
  auto op = TensorT<T>::make_op({m, fout});
  kernels::matmul_nt(x.data().data(), w.data().data(), op.out.data().data(), m, fin, fout);
  auto ov = op.out.data();
  auto bv = b.data();
  for (int r = 0; r < m; ++r)
    for (int f = 0; f < fout; ++f) ov[static_cast<int64_t>(r) * fout + f] += bv[f];
  op.depends_on(x);
  op.depends_on(w);
  op.depends_on(b);
  op.finish([m, fin, fout](auto& node) {
    auto g = node.grad;
    auto& px = node.parents[0];
    auto& pw = node.parents[1];
    auto& pb = node.parents[2];
    if (TensorT<T>::wants_grad(px))
      kernels::matmul_nn_acc(g.data(), TensorT<T>::value_of(pw).data(),
                             TensorT<T>::grad_of(px).data(), m, fout, fin);
    if (TensorT<T>::wants_grad(pw))
      kernels::matmul_tn_acc(g.data(), TensorT<T>::value_of(px).data(),
                             TensorT<T>::grad_of(pw).data(), m, fout, fin);
    if (TensorT<T>::wants_grad(pb)) {
      auto gb = TensorT<T>::grad_of(pb);
      for (int f = 0; f < fout; ++f) {
        T acc = 0;
        for (int r = 0; r < m; ++r) acc += g[static_cast<int64_t>(r) * fout + f];
        gb[f] += acc;
      }
    }
  });
  return op.out;
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw DimensionError("conv2d: expected [B,C,H,W] input and [O,C,k,k] kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int O = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != C)
    throw DimensionError("conv2d: channel axes disagree: input C=" + std::to_string(C) +
                         " kernel C=" + std::to_string(w.shape()[1]));
  if (w.shape()[3] != k) throw DimensionError("conv2d: kernel must be square");
  if (k < 1 || pad < 0 || stride < 1) throw ParameterError("conv2d: bad kernel/stride/padding");
  if (H + 2 * pad < k || W + 2 * pad < k)
    throw DimensionError("conv2d: kernel exceeds padded input: H=" + std::to_string(H) +
                         " pad=" + std::to_string(pad) + " k=" + std::to_string(k));
  const int HO = kernels::conv_out_extent(H, k, stride, pad);
  const int WO = kernels::conv_out_extent(W, k, stride, pad);
  auto op = TensorT<T>::make_op({B, O, HO, WO});
  kernels::conv2d_forward(x.data().data(), w.data().data(), op.out.data().data(), B, C, H, W, O,
                          k, stride, pad);
  op.depends_on(x);
  op.depends_on(w);
  op.finish([B, C, H, W, O, k, stride, pad](auto& node) {
    auto g = node.grad;
    auto& px = node.parents[0];
    auto& pw = node.parents[1];
    if (TensorT<T>::wants_grad(px))
      kernels::conv2d_backward_input(g.data(), TensorT<T>::value_of(pw).data(),
                                     TensorT<T>::grad_of(px).data(), B, C, H, W, O, k, stride,
                                     pad);
    if (TensorT<T>::wants_grad(pw))
      kernels::conv2d_backward_weight(g.data(), TensorT<T>::value_of(px).data(),
                                      TensorT<T>::grad_of(pw).data(), B, C, H, W, O, k, stride,
                                      pad);
  });
  return op.out;
}

// Central pixel-difference convolution (stride 1, same size, k odd).
template <class T>
TensorT<T> pdc_conv2d(const TensorT<T>& x, const TensorT<T>& w) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw DimensionError("pdc_conv2d: expected [B,C,H,W] and [O,C,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int O = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != C) throw DimensionError("pdc_conv2d: channel axes disagree");
  if (w.shape()[3] != k) throw DimensionError("pdc_conv2d: kernel must be square");
  if (k % 2 == 0) throw ParameterError("pdc_conv2d: kernel size must be odd, got " +
                                       std::to_string(k));
  auto op = TensorT<T>::make_op({B, O, H, W});
  kernels::pdc_forward(x.data().data(), w.data().data(), op.out.data().data(), B, C, H, W, O, k);
  op.depends_on(x);
  op.depends_on(w);
  op.finish([B, C, H, W, O, k](auto& node) {
    auto g = node.grad;
    auto& px = node.parents[0];
    auto& pw = node.parents[1];
    if (TensorT<T>::wants_grad(px))
      kernels::pdc_backward_input(g.data(), TensorT<T>::value_of(pw).data(),
                                  TensorT<T>::grad_of(px).data(), B, C, H, W, O, k);
    if (TensorT<T>::wants_grad(pw))
      kernels::pdc_backward_weight(g.data(), TensorT<T>::value_of(px).data(),
                                   TensorT<T>::grad_of(pw).data(), B, C, H, W, O, k);
  });
  return op.out;
}

template <class T>
TensorT<T> maxpool2(const TensorT<T>& x) {
  if (x.shape().size() != 4) throw DimensionError("maxpool2: expected [B,C,H,W]");
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (H % 2 || W % 2) throw DimensionError("maxpool2: odd spatial extents " + shape_str(x.shape()));
  auto op = TensorT<T>::make_op({B, C, H / 2, W / 2});
  auto idx = std::make_shared<std::vector<int64_t>>(op.out.numel());
  kernels::maxpool2_forward(x.data().data(), op.out.data().data(), idx->data(), B, C, H, W);
  op.depends_on(x);
  op.finish([idx, B, C, H, W](auto& node) {
    kernels::maxpool2_backward(node.grad.data(), idx->data(),
                               TensorT<T>::grad_of(node.parents[0]).data(), B, C, H, W);
  });
  return op.out;
}

template <class T>
TensorT<T> upsample2_nearest(const TensorT<T>& x) {
  if (x.shape().size() != 4) throw DimensionError("upsample2_nearest: expected [B,C,H,W]");
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto op = TensorT<T>::make_op({B, C, 2 * H, 2 * W});
  kernels::upsample2_forward(x.data().data(), op.out.data().data(), B, C, H, W);
  op.depends_on(x);
  op.finish([B, C, H, W](auto& node) {
    kernels::upsample2_backward(node.grad.data(), TensorT<T>::grad_of(node.parents[0]).data(), B,
                                C, H, W);
  });
  return op.out;
}

// Bilinear crop of one out x out patch per RoI rect; differentiable w.r.t.
// the input feature map. Rects are clamped to [0,1]; a rect that is empty
// after clamping is a region error.
template <class T>
TensorT<T> bilinear_crop(const TensorT<T>& x, std::vector<kernels::RoiRect> rois, int out) {
  if (x.shape().size() != 4) throw DimensionError("bilinear_crop: expected [B,C,H,W]");
  if (out < 1) throw ParameterError("bilinear_crop: output extent must be >= 1");
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  for (auto& r : rois) {
    if (r.batch < 0 || r.batch >= B)
      throw DimensionError("bilinear_crop: batch index " + std::to_string(r.batch) + " out of " +
                           std::to_string(B));
    r.x1 = std::clamp(r.x1, 0.f, 1.f);
    r.x2 = std::clamp(r.x2, 0.f, 1.f);
    r.y1 = std::clamp(r.y1, 0.f, 1.f);
    r.y2 = std::clamp(r.y2, 0.f, 1.f);
    if (r.x2 <= r.x1 || r.y2 <= r.y1)
      throw RegionError("bilinear_crop: degenerate region after clamping");
  }
  const int n = static_cast<int>(rois.size());
  auto op = TensorT<T>::make_op({n, C, out, out});
  kernels::crop_forward(x.data().data(), B, C, H, W, rois.data(), n, out, op.out.data().data());
  op.depends_on(x);
  op.finish([rois = std::move(rois), B, C, H, W, out](auto& node) {
    kernels::crop_backward(node.grad.data(), B, C, H, W, rois.data(),
                           static_cast<int>(rois.size()), out,
                           TensorT<T>::grad_of(node.parents[0]).data());
  });
  return op.out;
}

// Mean cross-entropy over rows of [M, D] logits against integer targets.
template <class T>
TensorT<T> cross_entropy_rows(const TensorT<T>& logits, std::vector<int> targets) {
  if (logits.shape().size() != 2) throw DimensionError("cross_entropy_rows: expected [M,D]");
  const int m = logits.shape()[0], d = logits.shape()[1];
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || t >= d) throw ParameterError("cross_entropy_rows: target out of range");
  auto op = TensorT<T>::make_op({});
  auto lv = logits.data();
  T total = 0;
  for (int r = 0; r < m; ++r) {
    const T* x = lv.data() + static_cast<int64_t>(r) * d;
    T mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    T lse = 0;
    for (int i = 0; i < d; ++i) lse += std::exp(x[i] - mx);
    total += std::log(lse) + mx - x[targets[r]];
  }
  op.out.data()[0] = total / static_cast<T>(m);
  op.depends_on(logits);
  op.finish([targets = std::move(targets), m, d](auto& node) {
    const T g = node.grad[0] / static_cast<T>(m);
    auto lv = TensorT<T>::value_of(node.parents[0]);
    auto gp = TensorT<T>::grad_of(node.parents[0]);
    for (int r = 0; r < m; ++r) {
      const T* x = lv.data() + static_cast<int64_t>(r) * d;
      T mx = x[0];
      for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
      T lse = 0;
      for (int i = 0; i < d; ++i) lse += std::exp(x[i] - mx);
      for (int i = 0; i < d; ++i) {
        const T p = std::exp(x[i] - mx) / lse;
        gp[static_cast<int64_t>(r) * d + i] += g * (p - (i == targets[r] ? T(1) : T(0)));
      }
    }
  });
  return op.out;
}

using Tensor = TensorT<float>;

}  // namespace sardet
