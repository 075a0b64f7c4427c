#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fshgr/errors.hpp"

namespace fshgr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

enum class OpKind : std::uint8_t {
  Leaf,
  Matmul,
  Conv1dCausal,
  Relu,
  Sigmoid,
  Tanh,
  Add,
  Mul,
  Scale,
  AddBiasCols,
  ConcatChannels,
  Transpose,
  Reshape,
  Column,
  SliceRows,
  StackColumns,
  SoftmaxLastDim,
  CausalSoftmaxRows,
  CrossEntropy,
  Sum,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv1dCausal: return "conv1d_causal";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBiasCols: return "add_bias_cols";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Column: return "column";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::StackColumns: return "stack_columns";
    case OpKind::SoftmaxLastDim: return "softmax_lastdim";
    case OpKind::CausalSoftmaxRows: return "causal_softmax_rows";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

namespace debug {
// Test hook: multiplies the gradient a chosen op propagates to its parents.
// Used to verify that the gradient checker actually catches a wrong backward.
struct GradientFault {
  bool active = false;
  OpKind op = OpKind::Leaf;
  double scale = 1.0;
};
inline GradientFault gradient_fault;
}  // namespace debug

template <typename T>
class Graph;

// Handle to a node in a Graph. Cheap to copy; valid until Graph::clear().
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Graph<T>* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  std::span<const T> value() const;
  std::span<const T> grad() const;
  bool requires_grad() const;

 private:
  friend class Graph<T>;
  Tensor(Graph<T>* g, int id) : g_(g), id_(id) {}
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

template <typename T>
struct GraphNode {
  OpKind op = OpKind::Leaf;
  Shape shape;
  std::vector<T> value;         // owned storage (empty when view != nullptr)
  const T* view = nullptr;      // non-owning leaf storage
  std::vector<T> grad;          // allocated lazily during backward
  std::vector<T> aux;           // op scratch kept for backward (cross_entropy softmax)
  int p0 = -1, p1 = -1;
  std::vector<int> extra_parents;  // stack_columns only
  int i0 = 0, i1 = 0;              // op payload: dilation / label / slice bounds / column
  T c = T(0);                      // scale constant
  int param_id = -1;
  std::int64_t n = 0;
  bool requires_grad = false;

  const T* data() const { return view ? view : value.data(); }
};

// Tape of executed primitive ops. Ops append nodes in execution order;
// backward() walks the tape once in reverse.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }
  const GraphNode<T>& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  GraphNode<T>& node_mut(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad = false) {
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(data.size()))
      throw DimensionError("leaf: shape " + shape_str(shape) + " does not match data length " +
                           std::to_string(data.size()));
    GraphNode<T> nd;
    nd.op = OpKind::Leaf;
    nd.shape = std::move(shape);
    nd.value = std::move(data);
    nd.n = n;
    nd.requires_grad = requires_grad;
    return push(std::move(nd));
  }

  // Leaf whose storage lives outside the graph; `data` must stay valid while
  // the graph is in use.
  Tensor<T> leaf_view(Shape shape, const T* data, bool requires_grad = false) {
    GraphNode<T> nd;
    nd.op = OpKind::Leaf;
    nd.n = shape_numel(shape);
    nd.shape = std::move(shape);
    nd.view = data;
    nd.requires_grad = requires_grad;
    return push(std::move(nd));
  }

  Tensor<T> param_leaf(Shape shape, const T* data, int param_id) {
    Tensor<T> t = leaf_view(std::move(shape), data, true);
    node_mut(t.id()).param_id = param_id;
    return t;
  }

  Tensor<T> zeros(Shape shape) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return leaf(std::move(shape), std::vector<T>(n, T(0)), false);
  }

  // Seeds d(loss)/d(loss) = seed and propagates through the tape in reverse
  // execution order. Gradients of fan-out nodes accumulate by summation.
  void backward(const Tensor<T>& loss, T seed = T(1));

  // Hash of the sign pattern at every relu input. Two forward passes that
  // disagree here straddle a relu kink, where central differences are invalid.
  std::uint64_t relu_sign_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nd : nodes_) {
      if (nd.op != OpKind::Relu) continue;
      const auto& px = nodes_[static_cast<std::size_t>(nd.p0)];
      const T* x = px.data();
      for (std::int64_t i = 0; i < px.n; ++i) {
        h ^= (x[i] > T(0)) ? 0x9eu : 0x31u;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  // Accumulates leaf gradients into `sink` by param_id: sink[param_id] += grad.
  void add_param_grads(std::vector<std::vector<T>>& sink) const {
    for (const auto& nd : nodes_) {
      if (nd.param_id < 0 || nd.grad.empty()) continue;
      auto& dst = sink[static_cast<std::size_t>(nd.param_id)];
      if (dst.size() != nd.grad.size())
        throw DimensionError("param grad sink size mismatch for param " +
                             std::to_string(nd.param_id));
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += nd.grad[i];
    }
  }

  Tensor<T> push(GraphNode<T>&& nd) {
#ifndef NDEBUG
    if (nd.op != OpKind::Leaf) {
      const T* d = nd.view ? nd.view : nd.value.data();
      for (std::int64_t i = 0; i < nd.n; ++i) {
        if (!std::isfinite(static_cast<double>(d[i])))
          throw NumericError(std::string("non-finite value in forward output of ") +
                             op_name(nd.op));
      }
    }
#endif
    nodes_.push_back(std::move(nd));
    return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

 private:
  void ensure_grad(int id) {
    auto& nd = nodes_[static_cast<std::size_t>(id)];
    if (nd.grad.empty()) nd.grad.assign(static_cast<std::size_t>(nd.n), T(0));
  }

  void backward_node(int id);

  std::vector<GraphNode<T>> nodes_;
};

template <typename T>
const Shape& Tensor<T>::shape() const { return g_->node(id_).shape; }
template <typename T>
std::int64_t Tensor<T>::numel() const { return g_->node(id_).n; }
template <typename T>
std::span<const T> Tensor<T>::value() const {
  const auto& nd = g_->node(id_);
  return {nd.data(), static_cast<std::size_t>(nd.n)};
}
template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& nd = g_->node(id_);
  return {nd.grad.data(), nd.grad.size()};
}
template <typename T>
bool Tensor<T>::requires_grad() const { return g_->node(id_).requires_grad; }

namespace detail {

template <typename T>
GraphNode<T> make_node(OpKind op, Shape shape, int p0, int p1, bool requires_grad) {
  GraphNode<T> nd;
  nd.op = op;
  nd.n = shape_numel(shape);
  nd.shape = std::move(shape);
  nd.value.assign(static_cast<std::size_t>(nd.n), T(0));
  nd.p0 = p0;
  nd.p1 = p1;
  nd.requires_grad = requires_grad;
  return nd;
}

inline void require_same_graph(bool same) {
  if (!same) throw ParameterError("operands belong to different graphs");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_graph(a.graph() == b.graph());
  Graph<T>& g = *a.graph();
  const auto& na = g.node(a.id());
  const auto& nb = g.node(b.id());
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(na.shape) + " and " +
                         shape_str(nb.shape));
  const int m = na.shape[0], p = na.shape[1], n = nb.shape[1];
  auto nd = detail::make_node<T>(OpKind::Matmul, {m, n}, a.id(), b.id(),
                                 na.requires_grad || nb.requires_grad);
  const T* A = na.data();
  const T* B = nb.data();
  T* C = nd.value.data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < p; ++kk) {
      const T aik = A[i * p + kk];
      if (aik == T(0)) continue;
      const T* brow = B + kk * n;
      T* crow = C + i * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return g.push(std::move(nd));
}

// Dilated causal 1-D convolution. x: [C_in x l], w: [C_out x C_in x k].
// The input is implicitly left-padded with d*(k-1) zeros so the output keeps
// length l and y[:, t] depends only on x[:, t'] with t' <= t.
template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Tensor<T>& w, int dilation) {
  detail::require_same_graph(x.graph() == w.graph());
  if (dilation < 1) throw ParameterError("conv1d_causal: dilation must be >= 1, got " +
                                         std::to_string(dilation));
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  const auto& nw = g.node(w.id());
  if (nx.shape.size() != 2 || nw.shape.size() != 3 || nw.shape[1] != nx.shape[0])
    throw DimensionError("conv1d_causal: incompatible shapes x=" + shape_str(nx.shape) +
                         " w=" + shape_str(nw.shape));
  const int cin = nx.shape[0], l = nx.shape[1];
  const int cout = nw.shape[0], k = nw.shape[2];
  if (k < 1) throw ParameterError("conv1d_causal: kernel size must be >= 1");
  auto nd = detail::make_node<T>(OpKind::Conv1dCausal, {cout, l}, x.id(), w.id(),
                                 nx.requires_grad || nw.requires_grad);
  nd.i0 = dilation;
  const T* X = nx.data();
  const T* W = nw.data();
  T* Y = nd.value.data();
  for (int co = 0; co < cout; ++co) {
    T* yrow = Y + co * l;
    for (int ci = 0; ci < cin; ++ci) {
      const T* xrow = X + ci * l;
      const T* wrow = W + (co * cin + ci) * k;
      for (int j = 0; j < k; ++j) {
        const T wj = wrow[j];
        if (wj == T(0)) continue;
        const int shift = (k - 1 - j) * dilation;  // taps reach backward in time
        for (int t = shift; t < l; ++t) yrow[t] += wj * xrow[t - shift];
      }
    }
  }
  return g.push(std::move(nd));
}

namespace detail {
template <typename T, typename F>
Tensor<T> unary_elementwise(const Tensor<T>& x, OpKind op, F&& f) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  auto nd = make_node<T>(op, nx.shape, x.id(), -1, nx.requires_grad);
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (std::int64_t i = 0; i < nd.n; ++i) Y[i] = f(X[i]);
  return g.push(std::move(nd));
}
}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_elementwise(x, OpKind::Relu, [](T v) { return v > T(0) ? v : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_elementwise(x, OpKind::Sigmoid, [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_elementwise(x, OpKind::Tanh, [](T v) { return std::tanh(v); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_graph(a.graph() == b.graph());
  Graph<T>& g = *a.graph();
  const auto& na = g.node(a.id());
  const auto& nb = g.node(b.id());
  if (na.shape != nb.shape)
    throw DimensionError("add: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  auto nd = detail::make_node<T>(OpKind::Add, na.shape, a.id(), b.id(),
                                 na.requires_grad || nb.requires_grad);
  const T* A = na.data();
  const T* B = nb.data();
  T* C = nd.value.data();
  for (std::int64_t i = 0; i < nd.n; ++i) C[i] = A[i] + B[i];
  return g.push(std::move(nd));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_graph(a.graph() == b.graph());
  Graph<T>& g = *a.graph();
  const auto& na = g.node(a.id());
  const auto& nb = g.node(b.id());
  if (na.shape != nb.shape)
    throw DimensionError("mul: shape mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  auto nd = detail::make_node<T>(OpKind::Mul, na.shape, a.id(), b.id(),
                                 na.requires_grad || nb.requires_grad);
  const T* A = na.data();
  const T* B = nb.data();
  T* C = nd.value.data();
  for (std::int64_t i = 0; i < nd.n; ++i) C[i] = A[i] * B[i];
  return g.push(std::move(nd));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  auto nd = detail::make_node<T>(OpKind::Scale, nx.shape, x.id(), -1, nx.requires_grad);
  nd.c = c;
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (std::int64_t i = 0; i < nd.n; ++i) Y[i] = c * X[i];
  return g.push(std::move(nd));
}

// x: [C x l], b: [C] -> adds b to every column.
template <typename T>
Tensor<T> add_bias_cols(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_same_graph(x.graph() == b.graph());
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  const auto& nb = g.node(b.id());
  if (nx.shape.size() != 2 || nb.shape.size() != 1 || nb.shape[0] != nx.shape[0])
    throw DimensionError("add_bias_cols: shape mismatch x=" + shape_str(nx.shape) +
                         " b=" + shape_str(nb.shape));
  const int c = nx.shape[0], l = nx.shape[1];
  auto nd = detail::make_node<T>(OpKind::AddBiasCols, nx.shape, x.id(), b.id(),
                                 nx.requires_grad || nb.requires_grad);
  const T* X = nx.data();
  const T* B = nb.data();
  T* Y = nd.value.data();
  for (int i = 0; i < c; ++i)
    for (int t = 0; t < l; ++t) Y[i * l + t] = X[i * l + t] + B[i];
  return g.push(std::move(nd));
}

// Stacks along the leading (channel) dimension. Accepts rank-1 vectors or
// rank-2 [C x l] tensors with matching trailing length.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_graph(a.graph() == b.graph());
  Graph<T>& g = *a.graph();
  const auto& na = g.node(a.id());
  const auto& nb = g.node(b.id());
  if (na.shape.size() != nb.shape.size() || na.shape.empty() || na.shape.size() > 2)
    throw DimensionError("concat_channels: rank mismatch " + shape_str(na.shape) + " vs " +
                         shape_str(nb.shape));
  if (na.shape.size() == 2 && na.shape[1] != nb.shape[1])
    throw DimensionError("concat_channels: trailing dims disagree " + shape_str(na.shape) +
                         " vs " + shape_str(nb.shape));
  Shape out = na.shape;
  out[0] += nb.shape[0];
  auto nd = detail::make_node<T>(OpKind::ConcatChannels, out, a.id(), b.id(),
                                 na.requires_grad || nb.requires_grad);
  T* Y = nd.value.data();
  const auto sz_a = static_cast<std::size_t>(na.n);
  for (std::size_t i = 0; i < sz_a; ++i) Y[i] = na.data()[i];
  for (std::size_t i = 0; i < static_cast<std::size_t>(nb.n); ++i) Y[sz_a + i] = nb.data()[i];
  return g.push(std::move(nd));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (nx.shape.size() != 2)
    throw DimensionError("transpose: expected rank-2 tensor, got " + shape_str(nx.shape));
  const int r = nx.shape[0], c = nx.shape[1];
  auto nd = detail::make_node<T>(OpKind::Transpose, {c, r}, x.id(), -1, nx.requires_grad);
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) Y[j * r + i] = X[i * c + j];
  return g.push(std::move(nd));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (shape_numel(shape) != nx.n)
    throw DimensionError("reshape: " + shape_str(nx.shape) + " has " + std::to_string(nx.n) +
                         " elements, target " + shape_str(shape) + " disagrees");
  auto nd = detail::make_node<T>(OpKind::Reshape, std::move(shape), x.id(), -1,
                                 nx.requires_grad);
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (std::int64_t i = 0; i < nd.n; ++i) Y[i] = X[i];
  return g.push(std::move(nd));
}

// Extracts column t of [C x l] as a rank-1 [C] vector.
template <typename T>
Tensor<T> column(const Tensor<T>& x, int t) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (nx.shape.size() != 2)
    throw DimensionError("column: expected rank-2 tensor, got " + shape_str(nx.shape));
  const int c = nx.shape[0], l = nx.shape[1];
  if (t < 0 || t >= l)
    throw ParameterError("column: index " + std::to_string(t) + " out of range for l=" +
                         std::to_string(l));
  auto nd = detail::make_node<T>(OpKind::Column, {c}, x.id(), -1, nx.requires_grad);
  nd.i0 = t;
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (int i = 0; i < c; ++i) Y[i] = X[i * l + t];
  return g.push(std::move(nd));
}

// Rows [lo, hi) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int lo, int hi) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (nx.shape.size() != 2)
    throw DimensionError("slice_rows: expected rank-2 tensor, got " + shape_str(nx.shape));
  const int r = nx.shape[0], c = nx.shape[1];
  if (lo < 0 || hi > r || lo >= hi)
    throw ParameterError("slice_rows: bad range [" + std::to_string(lo) + ", " +
                         std::to_string(hi) + ") for " + std::to_string(r) + " rows");
  auto nd = detail::make_node<T>(OpKind::SliceRows, {hi - lo, c}, x.id(), -1,
                                 nx.requires_grad);
  nd.i0 = lo;
  nd.i1 = hi;
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (int i = lo; i < hi; ++i)
    for (int j = 0; j < c; ++j) Y[(i - lo) * c + j] = X[i * c + j];
  return g.push(std::move(nd));
}

// Stacks rank-1 [C] vectors as columns of a [C x l] tensor.
template <typename T>
Tensor<T> stack_columns(std::span<const Tensor<T>> cols) {
  if (cols.empty()) throw ParameterError("stack_columns: no columns");
  Graph<T>& g = *cols[0].graph();
  const int c = g.node(cols[0].id()).shape.empty() ? 0 : g.node(cols[0].id()).shape[0];
  const int l = static_cast<int>(cols.size());
  bool rg = false;
  for (const auto& t : cols) {
    detail::require_same_graph(t.graph() == &g);
    const auto& nt = g.node(t.id());
    if (nt.shape.size() != 1 || nt.shape[0] != c)
      throw DimensionError("stack_columns: column shape " + shape_str(nt.shape) +
                           " does not match [" + std::to_string(c) + "]");
    rg = rg || nt.requires_grad;
  }
  auto nd = detail::make_node<T>(OpKind::StackColumns, {c, l}, -1, -1, rg);
  nd.extra_parents.reserve(cols.size());
  for (const auto& t : cols) nd.extra_parents.push_back(t.id());
  T* Y = nd.value.data();
  for (int j = 0; j < l; ++j) {
    const T* src = g.node(cols[static_cast<std::size_t>(j)].id()).data();
    for (int i = 0; i < c; ++i) Y[i * l + j] = src[i];
  }
  return g.push(std::move(nd));
}

// Softmax over the last dimension with max-subtraction; leading dims batch.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (nx.shape.empty()) throw DimensionError("softmax_lastdim: scalar input");
  const int last = nx.shape.back();
  const std::int64_t rows = nx.n / last;
  auto nd = detail::make_node<T>(OpKind::SoftmaxLastDim, nx.shape, x.id(), -1,
                                 nx.requires_grad);
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = X + r * last;
    T* yr = Y + r * last;
    T mx = xr[0];
    for (int j = 1; j < last; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j < last; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < last; ++j) yr[j] *= inv;
  }
  return g.push(std::move(nd));
}

// Row-wise softmax over a square [l x l] score matrix where row i only sees
// columns j <= i. Masked entries are exactly zero in the output and receive
// exactly zero gradient.
template <typename T>
Tensor<T> causal_softmax_rows(const Tensor<T>& x) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  if (nx.shape.size() != 2 || nx.shape[0] != nx.shape[1])
    throw DimensionError("causal_softmax_rows: expected square matrix, got " +
                         shape_str(nx.shape));
  const int l = nx.shape[0];
  auto nd = detail::make_node<T>(OpKind::CausalSoftmaxRows, nx.shape, x.id(), -1,
                                 nx.requires_grad);
  const T* X = nx.data();
  T* Y = nd.value.data();
  for (int i = 0; i < l; ++i) {
    const T* xr = X + i * l;
    T* yr = Y + i * l;
    T mx = xr[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (int j = 0; j <= i; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j <= i; ++j) yr[j] *= inv;
    for (int j = i + 1; j < l; ++j) yr[j] = T(0);
  }
  return g.push(std::move(nd));
}

// -log softmax(logits)[label]; logits rank-1. Output is a [1] scalar.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, int label) {
  Graph<T>& g = *logits.graph();
  const auto& nx = g.node(logits.id());
  if (nx.shape.size() != 1)
    throw DimensionError("cross_entropy: expected rank-1 logits, got " + shape_str(nx.shape));
  const int n = nx.shape[0];
  if (label < 0 || label >= n)
    throw ParameterError("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(n) + " classes");
  auto nd = detail::make_node<T>(OpKind::CrossEntropy, {1}, logits.id(), -1,
                                 nx.requires_grad);
  nd.i0 = label;
  const T* X = nx.data();
  T mx = X[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, X[j]);
  T sum = T(0);
  nd.aux.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    nd.aux[static_cast<std::size_t>(j)] = std::exp(X[j] - mx);
    sum += nd.aux[static_cast<std::size_t>(j)];
  }
  const T inv = T(1) / sum;
  for (int j = 0; j < n; ++j) nd.aux[static_cast<std::size_t>(j)] *= inv;  // keep softmax
  nd.value[0] = std::log(sum) + mx - X[label];
  return g.push(std::move(nd));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Graph<T>& g = *x.graph();
  const auto& nx = g.node(x.id());
  auto nd = detail::make_node<T>(OpKind::Sum, {1}, x.id(), -1, nx.requires_grad);
  T acc = T(0);
  const T* X = nx.data();
  for (std::int64_t i = 0; i < nx.n; ++i) acc += X[i];
  nd.value[0] = acc;
  return g.push(std::move(nd));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss, T seed) {
  if (loss.graph() != this) throw ParameterError("backward: loss from a different graph");
  auto& ln = nodes_[static_cast<std::size_t>(loss.id())];
  if (ln.n != 1) throw DimensionError("backward: loss must be scalar, got " +
                                      shape_str(ln.shape));
  ensure_grad(loss.id());
  ln.grad[0] += seed;
  for (int id = loss.id(); id >= 0; --id) {
    const auto& nd = nodes_[static_cast<std::size_t>(id)];
    if (!nd.requires_grad || nd.grad.empty() || nd.op == OpKind::Leaf) continue;
    backward_node(id);
  }
}

template <typename T>
void Graph<T>::backward_node(int id) {
  auto& nd = nodes_[static_cast<std::size_t>(id)];
  T fault = T(1);
  if (debug::gradient_fault.active && debug::gradient_fault.op == nd.op)
    fault = static_cast<T>(debug::gradient_fault.scale);

  const auto parent_needs = [&](int p) {
    return p >= 0 && nodes_[static_cast<std::size_t>(p)].requires_grad;
  };
  const auto pgrad = [&](int p) -> T* {
    ensure_grad(p);
    return nodes_[static_cast<std::size_t>(p)].grad.data();
  };

  const T* dy = nd.grad.data();
  switch (nd.op) {
    case OpKind::Leaf:
      break;
    case OpKind::Matmul: {
      const auto& na = nodes_[static_cast<std::size_t>(nd.p0)];
      const auto& nb = nodes_[static_cast<std::size_t>(nd.p1)];
      const int m = na.shape[0], p = na.shape[1], n = nb.shape[1];
      if (parent_needs(nd.p0)) {
        T* da = pgrad(nd.p0);
        const T* B = nb.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < p; ++kk) {
            T acc = T(0);
            const T* dyr = dy + i * n;
            const T* br = B + kk * n;
            for (int j = 0; j < n; ++j) acc += dyr[j] * br[j];
            da[i * p + kk] += fault * acc;
          }
      }
      if (parent_needs(nd.p1)) {
        T* db = pgrad(nd.p1);
        const T* A = na.data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < p; ++kk) {
            const T aik = fault * A[i * p + kk];
            if (aik == T(0)) continue;
            const T* dyr = dy + i * n;
            T* dbr = db + kk * n;
            for (int j = 0; j < n; ++j) dbr[j] += aik * dyr[j];
          }
      }
      break;
    }
    case OpKind::Conv1dCausal: {
      const auto& nx = nodes_[static_cast<std::size_t>(nd.p0)];
      const auto& nw = nodes_[static_cast<std::size_t>(nd.p1)];
      const int cin = nx.shape[0], l = nx.shape[1];
      const int cout = nw.shape[0], k = nw.shape[2];
      const int d = nd.i0;
      if (parent_needs(nd.p0)) {
        T* dx = pgrad(nd.p0);
        const T* W = nw.data();
        for (int co = 0; co < cout; ++co) {
          const T* dyr = dy + co * l;
          for (int ci = 0; ci < cin; ++ci) {
            const T* wrow = W + (co * cin + ci) * k;
            T* dxr = dx + ci * l;
            for (int j = 0; j < k; ++j) {
              const T wj = fault * wrow[j];
              if (wj == T(0)) continue;
              const int shift = (k - 1 - j) * d;
              for (int t = shift; t < l; ++t) dxr[t - shift] += wj * dyr[t];
            }
          }
        }
      }
      if (parent_needs(nd.p1)) {
        T* dw = pgrad(nd.p1);
        const T* X = nx.data();
        for (int co = 0; co < cout; ++co) {
          const T* dyr = dy + co * l;
          for (int ci = 0; ci < cin; ++ci) {
            const T* xrow = X + ci * l;
            T* dwr = dw + (co * cin + ci) * k;
            for (int j = 0; j < k; ++j) {
              const int shift = (k - 1 - j) * d;
              T acc = T(0);
              for (int t = shift; t < l; ++t) acc += dyr[t] * xrow[t - shift];
              dwr[j] += fault * acc;
            }
          }
        }
      }
      break;
    }
    case OpKind::Relu: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const T* X = nodes_[static_cast<std::size_t>(nd.p0)].data();
      // subgradient at exactly 0 is 0
      for (std::int64_t i = 0; i < nd.n; ++i)
        if (X[i] > T(0)) dx[i] += fault * dy[i];
      break;
    }
    case OpKind::Sigmoid: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const T* Y = nd.data();
      for (std::int64_t i = 0; i < nd.n; ++i) dx[i] += fault * dy[i] * Y[i] * (T(1) - Y[i]);
      break;
    }
    case OpKind::Tanh: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const T* Y = nd.data();
      for (std::int64_t i = 0; i < nd.n; ++i) dx[i] += fault * dy[i] * (T(1) - Y[i] * Y[i]);
      break;
    }
    case OpKind::Add: {
      if (parent_needs(nd.p0)) {
        T* da = pgrad(nd.p0);
        for (std::int64_t i = 0; i < nd.n; ++i) da[i] += fault * dy[i];
      }
      if (parent_needs(nd.p1)) {
        T* db = pgrad(nd.p1);
        for (std::int64_t i = 0; i < nd.n; ++i) db[i] += fault * dy[i];
      }
      break;
    }
    case OpKind::Mul: {
      const T* A = nodes_[static_cast<std::size_t>(nd.p0)].data();
      const T* B = nodes_[static_cast<std::size_t>(nd.p1)].data();
      if (parent_needs(nd.p0)) {
        T* da = pgrad(nd.p0);
        for (std::int64_t i = 0; i < nd.n; ++i) da[i] += fault * dy[i] * B[i];
      }
      if (parent_needs(nd.p1)) {
        T* db = pgrad(nd.p1);
        for (std::int64_t i = 0; i < nd.n; ++i) db[i] += fault * dy[i] * A[i];
      }
      break;
    }
    case OpKind::Scale: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      for (std::int64_t i = 0; i < nd.n; ++i) dx[i] += fault * nd.c * dy[i];
      break;
    }
    case OpKind::AddBiasCols: {
      const int c = nd.shape[0], l = nd.shape[1];
      if (parent_needs(nd.p0)) {
        T* dx = pgrad(nd.p0);
        for (std::int64_t i = 0; i < nd.n; ++i) dx[i] += fault * dy[i];
      }
      if (parent_needs(nd.p1)) {
        T* db = pgrad(nd.p1);
        for (int i = 0; i < c; ++i) {
          T acc = T(0);
          for (int t = 0; t < l; ++t) acc += dy[i * l + t];
          db[i] += fault * acc;
        }
      }
      break;
    }
    case OpKind::ConcatChannels: {
      const auto& na = nodes_[static_cast<std::size_t>(nd.p0)];
      const auto sz_a = static_cast<std::size_t>(na.n);
      if (parent_needs(nd.p0)) {
        T* da = pgrad(nd.p0);
        for (std::size_t i = 0; i < sz_a; ++i) da[i] += fault * dy[i];
      }
      if (parent_needs(nd.p1)) {
        T* db = pgrad(nd.p1);
        const auto szb = static_cast<std::size_t>(nodes_[static_cast<std::size_t>(nd.p1)].n);
        for (std::size_t i = 0; i < szb; ++i) db[i] += fault * dy[sz_a + i];
      }
      break;
    }
    case OpKind::Transpose: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const int c = nd.shape[0], r = nd.shape[1];  // output is [c x r]
      for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) dx[i * c + j] += fault * dy[j * r + i];
      break;
    }
    case OpKind::Reshape: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      for (std::int64_t i = 0; i < nd.n; ++i) dx[i] += fault * dy[i];
      break;
    }
    case OpKind::Column: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const auto& nx = nodes_[static_cast<std::size_t>(nd.p0)];
      const int c = nx.shape[0], l = nx.shape[1];
      for (int i = 0; i < c; ++i) dx[i * l + nd.i0] += fault * dy[i];
      break;
    }
    case OpKind::SliceRows: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const auto& nx = nodes_[static_cast<std::size_t>(nd.p0)];
      const int c = nx.shape[1];
      for (int i = nd.i0; i < nd.i1; ++i)
        for (int j = 0; j < c; ++j) dx[i * c + j] += fault * dy[(i - nd.i0) * c + j];
      break;
    }
    case OpKind::StackColumns: {
      const int c = nd.shape[0], l = nd.shape[1];
      for (int j = 0; j < l; ++j) {
        const int p = nd.extra_parents[static_cast<std::size_t>(j)];
        if (!parent_needs(p)) continue;
        T* dp = pgrad(p);
        for (int i = 0; i < c; ++i) dp[i] += fault * dy[i * l + j];
      }
      break;
    }
    case OpKind::SoftmaxLastDim: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const T* Y = nd.data();
      const int last = nd.shape.back();
      const std::int64_t rows = nd.n / last;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* yr = Y + r * last;
        const T* dyr = dy + r * last;
        T dot = T(0);
        for (int j = 0; j < last; ++j) dot += dyr[j] * yr[j];
        T* dxr = dx + r * last;
        for (int j = 0; j < last; ++j) dxr[j] += fault * yr[j] * (dyr[j] - dot);
      }
      break;
    }
    case OpKind::CausalSoftmaxRows: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const T* Y = nd.data();
      const int l = nd.shape[0];
      for (int i = 0; i < l; ++i) {
        const T* yr = Y + i * l;
        const T* dyr = dy + i * l;
        T dot = T(0);
        for (int j = 0; j <= i; ++j) dot += dyr[j] * yr[j];
        T* dxr = dx + i * l;
        for (int j = 0; j <= i; ++j) dxr[j] += fault * yr[j] * (dyr[j] - dot);
      }
      break;
    }
    case OpKind::CrossEntropy: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const int n = static_cast<int>(nd.aux.size());
      const T d0 = dy[0];
      for (int j = 0; j < n; ++j) {
        T s = nd.aux[static_cast<std::size_t>(j)];
        if (j == nd.i0) s -= T(1);
        dx[j] += fault * d0 * s;
      }
      break;
    }
    case OpKind::Sum: {
      if (!parent_needs(nd.p0)) break;
      T* dx = pgrad(nd.p0);
      const auto& nx = nodes_[static_cast<std::size_t>(nd.p0)];
      for (std::int64_t i = 0; i < nx.n; ++i) dx[i] += fault * dy[0];
      break;
    }
  }
}

}  // namespace fshgr
