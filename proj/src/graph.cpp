#include "blosa/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace blosa {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::concat: return "concat";
    case OpKind::split: return "split";
    case OpKind::reshape: return "reshape";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::elu: return "elu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::abs: return "abs";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::sum: return "sum";
    case OpKind::max: return "max";
    case OpKind::transpose: return "transpose";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::pairwise_add: return "pairwise_add";
    case OpKind::mask_add: return "mask_add";
    case OpKind::sub: return "sub";
    case OpKind::linear: return "linear";
    case OpKind::lerp: return "lerp";
  }
  return "unknown";
}

std::span<const OpKind> differentiable_kinds() {
  static constexpr std::array kinds = {
      OpKind::matmul,  OpKind::add,       OpKind::mul,         OpKind::scalar_mul,
      OpKind::concat,  OpKind::split,     OpKind::reshape,     OpKind::tanh,
      OpKind::sigmoid, OpKind::relu,      OpKind::elu,         OpKind::exp,
      OpKind::log,     OpKind::abs,       OpKind::softmax,     OpKind::log_softmax,
      OpKind::sum,     OpKind::max,       OpKind::transpose,   OpKind::embedding_lookup,
      OpKind::pairwise_add, OpKind::mask_add, OpKind::sub, OpKind::linear,
      OpKind::lerp,
  };
  return kinds;
}

namespace {

// [outer, axis, inner] factorisation of a shape around `axis`.
struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

std::string axis_detail(std::string_view what, Index axis, Index got, Index want) {
  return std::string(what) + " axis " + std::to_string(axis) + " has length " +
         std::to_string(got) + ", expected " + std::to_string(want);
}

void require_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ShapeError(std::string(op_name(kind)),
                     "expects " + std::to_string(want) + " inputs, got " + std::to_string(got));
  }
}

Index normalize_axis(OpKind kind, Index axis, Index rank) {
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op_name(kind)), "axis " + std::to_string(axis) +
                                                     " out of range for rank " +
                                                     std::to_string(rank));
  }
  return axis;
}

// rhs must equal the trailing axes of lhs.
void check_trailing(OpKind kind, const Shape& lhs, const Shape& rhs) {
  if (rhs.size() > lhs.size()) {
    throw ShapeError(std::string(op_name(kind)),
                     "rhs " + shape_string(rhs) + " has more axes than lhs " + shape_string(lhs));
  }
  const std::size_t off = lhs.size() - rhs.size();
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    if (lhs[off + i] != rhs[i]) {
      throw ShapeError(std::string(op_name(kind)),
                       "rhs " + shape_string(rhs) + " does not match trailing axes of lhs " +
                           shape_string(lhs) + " (lhs axis " + std::to_string(off + i) + ")");
    }
  }
}

template <typename Scalar>
void accumulate(Tensor<Scalar>& slot, Tensor<Scalar>&& contribution) {
  if (slot.empty()) {
    slot = std::move(contribution);
  } else {
    slot.array() += contribution.array();
  }
}

template <typename Scalar>
constexpr Scalar neg_inf() {
  return -std::numeric_limits<Scalar>::infinity();
}

// ---------------------------------------------------------------- forward

template <typename Scalar>
Tensor<Scalar> forward_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2)) {
    throw ShapeError("matmul", "expects [a,b]x[b,c] or [b]x[b,c], got " + shape_string(a.shape()) +
                                   " x " + shape_string(b.shape()));
  }
  const Index inner = a.shape().back();
  if (inner != b.dim(0)) {
    throw ShapeError("matmul", "inner dimensions differ: lhs axis " +
                                   std::to_string(a.rank() - 1) + " = " + std::to_string(inner) +
                                   ", rhs axis 0 = " + std::to_string(b.dim(0)));
  }
  Shape out_shape = a.rank() == 1 ? Shape{b.dim(1)} : Shape{a.dim(0), b.dim(1)};
  Tensor<Scalar> out(out_shape);
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                              const Tensor<Scalar>& b) {
  Tensor<Scalar> out = forward_matmul(x, w);
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) {
    throw ShapeError("linear", "bias " + shape_string(b.shape()) + " must be [" +
                                   std::to_string(w.dim(1)) + "]");
  }
  const Index cols = b.dim(0);
  for (Index r = 0; r < out.size() / cols; ++r) {
    Scalar* po = out.data() + r * cols;
    for (Index c = 0; c < cols; ++c) po[c] += b[c];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_lerp(const Tensor<Scalar>& x, const Tensor<Scalar>& f,
                            const Tensor<Scalar>& g) {
  if (f.shape() != x.shape() || g.shape() != x.shape()) {
    throw ShapeError("lerp", "shapes differ: " + shape_string(x.shape()) + ", " +
                                 shape_string(f.shape()) + ", " + shape_string(g.shape()));
  }
  Tensor<Scalar> out(x.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = x[i] + g[i] * (f[i] - x[i]);
  return out;
}

template <typename Scalar, typename Fn>
Tensor<Scalar> forward_broadcast(OpKind kind, const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                 Fn fn) {
  check_trailing(kind, a.shape(), b.shape());
  Tensor<Scalar> out(a.shape());
  const Index block = b.size();
  const Index reps = block == 0 ? 0 : a.size() / block;
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  Scalar* po = out.data();
  for (Index r = 0; r < reps; ++r) {
    for (Index i = 0; i < block; ++i) po[r * block + i] = fn(pa[r * block + i], pb[i]);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_concat(std::span<const Tensor<Scalar>* const> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat", "needs at least one input");
  const Shape& first = parts[0]->shape();
  axis = normalize_axis(OpKind::concat, axis, static_cast<Index>(first.size()));
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto* p : parts) {
    if (p->rank() != static_cast<Index>(first.size())) {
      throw ShapeError("concat", "rank mismatch: " + shape_string(p->shape()) + " vs " +
                                     shape_string(first));
    }
    for (Index i = 0; i < p->rank(); ++i) {
      if (i != axis && p->dim(i) != first[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat", axis_detail("input", i, p->dim(i),
                                               first[static_cast<std::size_t>(i)]));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p->dim(axis);
  }
  Tensor<Scalar> out(out_shape);
  const AxisSplit os = split_at(out_shape, axis);
  Index offset = 0;
  for (const auto* p : parts) {
    const AxisSplit ps = split_at(p->shape(), axis);
    const Index chunk = ps.len * ps.inner;
    for (Index o = 0; o < os.outer; ++o) {
      std::copy_n(p->data() + o * chunk, chunk, out.data() + (o * os.len + offset) * os.inner);
    }
    offset += ps.len;
  }
  return out;
}

struct SplitRange {
  Index offset;
  Index len;
};

SplitRange split_range(const Shape& shape, const OpAttrs& attrs) {
  const Index axis = normalize_axis(OpKind::split, attrs.axis, static_cast<Index>(shape.size()));
  Index total = 0;
  for (Index s : attrs.sizes) {
    if (s < 0) throw ShapeError("split", "negative part size");
    total += s;
  }
  if (total != shape[static_cast<std::size_t>(axis)]) {
    throw ShapeError("split", axis_detail("sizes sum to " + std::to_string(total) + ";", axis,
                                          shape[static_cast<std::size_t>(axis)], total));
  }
  if (attrs.part < 0 || attrs.part >= static_cast<Index>(attrs.sizes.size())) {
    throw ShapeError("split", "part " + std::to_string(attrs.part) + " out of range");
  }
  Index offset = 0;
  for (Index i = 0; i < attrs.part; ++i) offset += attrs.sizes[static_cast<std::size_t>(i)];
  return {offset, attrs.sizes[static_cast<std::size_t>(attrs.part)]};
}

template <typename Scalar>
Tensor<Scalar> forward_split(const Tensor<Scalar>& a, const OpAttrs& attrs) {
  const SplitRange range = split_range(a.shape(), attrs);
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(attrs.axis)] = range.len;
  Tensor<Scalar> out(out_shape);
  const AxisSplit as = split_at(a.shape(), attrs.axis);
  const Index chunk = range.len * as.inner;
  for (Index o = 0; o < as.outer; ++o) {
    std::copy_n(a.data() + (o * as.len + range.offset) * as.inner, chunk, out.data() + o * chunk);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_softmax(const Tensor<Scalar>& a, bool take_log) {
  if (a.rank() < 1) throw ShapeError(take_log ? "log_softmax" : "softmax", "needs rank >= 1");
  Tensor<Scalar> out(a.shape());
  const Index cols = a.cols();
  const Index rows = a.rows();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* in = a.data() + r * cols;
    Scalar* o = out.data() + r * cols;
    Scalar m = neg_inf<Scalar>();
    for (Index c = 0; c < cols; ++c) m = std::max(m, in[c]);
    if (m == neg_inf<Scalar>()) {
      // Fully masked row: no admissible entry, all-zero distribution.
      std::fill_n(o, cols, take_log ? neg_inf<Scalar>() : Scalar(0));
      continue;
    }
    Scalar z = 0;
    for (Index c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - m);
      z += o[c];
    }
    if (take_log) {
      const Scalar lz = std::log(z);
      for (Index c = 0; c < cols; ++c) o[c] = in[c] - m - lz;
    } else {
      const Scalar inv = Scalar(1) / z;
      for (Index c = 0; c < cols; ++c) o[c] *= inv;
    }
  }
  return out;
}

Shape reduced_shape(OpKind kind, const Shape& shape, Index axis) {
  if (kind == OpKind::sum && axis == kAllAxes) return {};
  axis = normalize_axis(kind, axis, static_cast<Index>(shape.size()));
  Shape out = shape;
  out.erase(out.begin() + axis);
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_reduce(OpKind kind, const Tensor<Scalar>& a, Index axis) {
  Tensor<Scalar> out(reduced_shape(kind, a.shape(), axis));
  if (axis == kAllAxes) {
    Scalar acc = 0;
    for (Index i = 0; i < a.size(); ++i) acc += a[i];
    out[0] = acc;
    return out;
  }
  const AxisSplit s = split_at(a.shape(), axis);
  if (kind == OpKind::max) {
    if (s.len == 0) throw ShapeError("max", "cannot reduce an empty axis");
    out.fill(neg_inf<Scalar>());
  }
  for (Index o = 0; o < s.outer; ++o) {
    Scalar* po = out.data() + o * s.inner;
    for (Index l = 0; l < s.len; ++l) {
      const Scalar* pa = a.data() + (o * s.len + l) * s.inner;
      if (kind == OpKind::sum) {
        for (Index i = 0; i < s.inner; ++i) po[i] += pa[i];
      } else {
        for (Index i = 0; i < s.inner; ++i) po[i] = std::max(po[i], pa[i]);
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_transpose(const Tensor<Scalar>& a) {
  if (a.rank() < 2) throw ShapeError("transpose", "needs rank >= 2, got " + shape_string(a.shape()));
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor<Scalar> out(out_shape);
  const Index r = a.dim(a.rank() - 2);
  const Index c = a.dim(a.rank() - 1);
  const Index batch = r * c == 0 ? 0 : a.size() / (r * c);
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const RowMatrix<Scalar>> in(a.data() + b * r * c, r, c);
    Eigen::Map<RowMatrix<Scalar>> o(out.data() + b * r * c, c, r);
    o = in.transpose();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_lookup(const Tensor<Scalar>& table, const std::vector<Index>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup", "table must be [N, d], got " + shape_string(table.shape()));
  }
  const Index vocab = table.dim(0);
  const Index d = table.dim(1);
  Tensor<Scalar> out({static_cast<Index>(ids.size()), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) {
      throw ShapeError("embedding_lookup", "id " + std::to_string(ids[t]) +
                                               " outside vocabulary of size " +
                                               std::to_string(vocab));
    }
    std::copy_n(table.data() + ids[t] * d, d, out.data() + static_cast<Index>(t) * d);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_pairwise(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("pairwise_add", "expects [n_i,d] and [n_j,d], got " +
                                         shape_string(a.shape()) + " and " +
                                         shape_string(b.shape()));
  }
  const Index ni = a.dim(0), nj = b.dim(0), d = a.dim(1);
  Tensor<Scalar> out({nj, d, ni});
  Scalar* po = out.data();
  for (Index j = 0; j < nj; ++j) {
    for (Index k = 0; k < d; ++k) {
      const Scalar bk = b(j, k);
      for (Index i = 0; i < ni; ++i) *po++ = a.data()[i * d + k] + bk;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> forward_mask_add(const Tensor<Scalar>& s, const Tensor<Scalar>& m) {
  if (s.rank() != 3 || m.rank() != 2 || m.dim(0) != s.dim(0) || m.dim(1) != s.dim(2)) {
    throw ShapeError("mask_add", "expects S [a,b,c] and M [a,c], got " + shape_string(s.shape()) +
                                     " and " + shape_string(m.shape()));
  }
  const Index a = s.dim(0), b = s.dim(1), c = s.dim(2);
  Tensor<Scalar> out(s.shape());
  for (Index j = 0; j < a; ++j) {
    const Scalar* mrow = m.data() + j * c;
    for (Index k = 0; k < b; ++k) {
      const Scalar* ps = s.data() + (j * b + k) * c;
      Scalar* po = out.data() + (j * b + k) * c;
      for (Index i = 0; i < c; ++i) po[i] = ps[i] + mrow[i];
    }
  }
  return out;
}

template <typename Scalar, typename Fn>
Tensor<Scalar> map_unary(const Tensor<Scalar>& a, Fn fn) {
  Tensor<Scalar> out(a.shape());
  for (Index i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

// --------------------------------------------------------------- backward

// Sum over leading repetitions of a broadcast operand, sequential in r.
template <typename Scalar>
Tensor<Scalar> reduce_leading(const Tensor<Scalar>& g, const Shape& target) {
  Tensor<Scalar> out(target);
  const Index block = out.size();
  const Index reps = block == 0 ? 0 : g.size() / block;
  for (Index r = 0; r < reps; ++r) {
    const Scalar* pg = g.data() + r * block;
    for (Index i = 0; i < block; ++i) out[i] += pg[i];
  }
  return out;
}

}  // namespace

template <typename Scalar>
const Tensor<Scalar>& Gradients<Scalar>::operator[](NodeId id) const {
  if (!has(id)) throw std::out_of_range("no gradient recorded for node " + std::to_string(id.index));
  return grads_[id.index];
}

template <typename Scalar>
auto Graph<Scalar>::node(NodeId id) const -> const Node& {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("node id " + std::to_string(id.index) + " not in graph");
  }
  return nodes_[id.index];
}

template <typename Scalar>
NodeId Graph<Scalar>::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

template <typename Scalar>
const Tensor<Scalar>& Graph<Scalar>::value(NodeId id) const {
  const Node& n = node(id);
  return n.borrowed ? *n.borrowed : n.value;
}

template <typename Scalar>
NodeId Graph<Scalar>::variable(Tensor<Scalar> value, std::string label) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.label = std::move(label);
  return push(std::move(n));
}

template <typename Scalar>
NodeId Graph<Scalar>::constant(Tensor<Scalar> value, std::string label) {
  Node n;
  n.value = std::move(value);
  n.label = std::move(label);
  return push(std::move(n));
}

template <typename Scalar>
NodeId Graph<Scalar>::parameter(const Tensor<Scalar>& value, std::string label) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = true;
  n.label = std::move(label);
  return push(std::move(n));
}

template <typename Scalar>
NodeId Graph<Scalar>::apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs) {
  std::vector<const Tensor<Scalar>*> in;
  in.reserve(inputs.size());
  bool requires_grad = false;
  for (NodeId id : inputs) {
    in.push_back(&value(id));
    requires_grad = requires_grad || node(id).requires_grad;
  }

  Tensor<Scalar> out;
  switch (kind) {
    case OpKind::matmul:
      require_arity(kind, in.size(), 2);
      out = forward_matmul(*in[0], *in[1]);
      break;
    case OpKind::add:
      require_arity(kind, in.size(), 2);
      out = forward_broadcast(kind, *in[0], *in[1], [](Scalar x, Scalar y) { return x + y; });
      break;
    case OpKind::sub:
      require_arity(kind, in.size(), 2);
      out = forward_broadcast(kind, *in[0], *in[1], [](Scalar x, Scalar y) { return x - y; });
      break;
    case OpKind::mul:
      require_arity(kind, in.size(), 2);
      out = forward_broadcast(kind, *in[0], *in[1], [](Scalar x, Scalar y) { return x * y; });
      break;
    case OpKind::linear:
      require_arity(kind, in.size(), 3);
      out = forward_linear(*in[0], *in[1], *in[2]);
      break;
    case OpKind::lerp:
      require_arity(kind, in.size(), 3);
      out = forward_lerp(*in[0], *in[1], *in[2]);
      break;
    case OpKind::scalar_mul: {
      require_arity(kind, in.size(), 1);
      const Scalar s = static_cast<Scalar>(attrs.scalar);
      out = map_unary(*in[0], [s](Scalar x) { return s * x; });
      break;
    }
    case OpKind::concat:
      out = forward_concat<Scalar>(in, attrs.axis);
      break;
    case OpKind::split:
      require_arity(kind, in.size(), 1);
      out = forward_split(*in[0], attrs);
      break;
    case OpKind::reshape:
      require_arity(kind, in.size(), 1);
      out = in[0]->reshaped(attrs.shape);
      break;
    case OpKind::tanh:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return std::tanh(x); });
      break;
    case OpKind::sigmoid:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      });
      break;
    case OpKind::relu:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return x > 0 ? x : Scalar(0); });
      break;
    case OpKind::elu:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return x > 0 ? x : std::expm1(x); });
      break;
    case OpKind::exp:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return std::exp(x); });
      break;
    case OpKind::log:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return std::log(x); });
      break;
    case OpKind::abs:
      require_arity(kind, in.size(), 1);
      out = map_unary(*in[0], [](Scalar x) { return std::abs(x); });
      break;
    case OpKind::softmax:
    case OpKind::log_softmax:
      require_arity(kind, in.size(), 1);
      out = forward_softmax(*in[0], kind == OpKind::log_softmax);
      break;
    case OpKind::sum:
    case OpKind::max:
      require_arity(kind, in.size(), 1);
      out = forward_reduce(kind, *in[0], attrs.axis);
      break;
    case OpKind::transpose:
      require_arity(kind, in.size(), 1);
      out = forward_transpose(*in[0]);
      break;
    case OpKind::embedding_lookup:
      require_arity(kind, in.size(), 1);
      out = forward_lookup(*in[0], attrs.ids);
      break;
    case OpKind::pairwise_add:
      require_arity(kind, in.size(), 2);
      out = forward_pairwise(*in[0], *in[1]);
      break;
    case OpKind::mask_add:
      require_arity(kind, in.size(), 2);
      out = forward_mask_add(*in[0], *in[1]);
      break;
    case OpKind::leaf:
      throw std::invalid_argument("apply: leaf nodes are created with variable/constant/parameter");
    default:
      throw std::invalid_argument("apply: unknown op kind " +
                                  std::to_string(static_cast<int>(kind)));
  }

  Node n;
  n.kind = kind;
  n.parents.assign(inputs.begin(), inputs.end());
  n.attrs = attrs;
  n.value = std::move(out);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename Scalar>
Gradients<Scalar> Graph<Scalar>::backward(NodeId loss) const {
  const Node& root = node(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward", "loss must be a scalar, got shape " +
                                     shape_string(value(loss).shape()));
  }
  Gradients<Scalar> grads(nodes_.size());
  grads.slot(loss) = Tensor<Scalar>(value(loss).shape(), Scalar(1));
  if (!root.requires_grad) return grads;

  for (std::size_t k = loss.index + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (n.kind == OpKind::leaf || !n.requires_grad) continue;
    const NodeId self{k};
    if (!grads.has(self)) continue;
    const Tensor<Scalar>& g = grads[self];
    const Tensor<Scalar>& y = value(self);
    const auto& ps = n.parents;
    auto wants = [&](std::size_t i) { return nodes_[ps[i].index].requires_grad; };
    auto x = [&](std::size_t i) -> const Tensor<Scalar>& { return value(ps[i]); };
    auto give = [&](std::size_t i, Tensor<Scalar>&& t) { accumulate(grads.slot(ps[i]), std::move(t)); };

    switch (n.kind) {
      case OpKind::matmul: {
        const Tensor<Scalar>& a = x(0);
        const Tensor<Scalar>& b = x(1);
        if (wants(0)) {
          Tensor<Scalar> da(a.shape());
          da.matrix().noalias() = g.matrix() * b.matrix().transpose();
          give(0, std::move(da));
        }
        if (wants(1)) {
          Tensor<Scalar> db(b.shape());
          db.matrix().noalias() = a.matrix().transpose() * g.matrix();
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::add:
        if (wants(0)) give(0, Tensor<Scalar>(g));
        if (wants(1)) give(1, reduce_leading(g, x(1).shape()));
        break;
      case OpKind::sub:
        if (wants(0)) give(0, Tensor<Scalar>(g));
        if (wants(1)) {
          Tensor<Scalar> db = reduce_leading(g, x(1).shape());
          db.array() = -db.array();
          give(1, std::move(db));
        }
        break;
      case OpKind::linear: {
        const Tensor<Scalar>& a = x(0);
        const Tensor<Scalar>& w = x(1);
        if (wants(0)) {
          Tensor<Scalar> da(a.shape());
          da.matrix().noalias() = g.matrix() * w.matrix().transpose();
          give(0, std::move(da));
        }
        if (wants(1)) {
          Tensor<Scalar> dw(w.shape());
          dw.matrix().noalias() = a.matrix().transpose() * g.matrix();
          give(1, std::move(dw));
        }
        if (wants(2)) give(2, reduce_leading(g, x(2).shape()));
        break;
      }
      case OpKind::lerp: {
        const Tensor<Scalar>& a = x(0);
        const Tensor<Scalar>& f = x(1);
        const Tensor<Scalar>& gate = x(2);
        if (wants(0)) {
          Tensor<Scalar> d(a.shape());
          for (Index i = 0; i < a.size(); ++i) d[i] = g[i] * (Scalar(1) - gate[i]);
          give(0, std::move(d));
        }
        if (wants(1)) {
          Tensor<Scalar> d(f.shape());
          for (Index i = 0; i < f.size(); ++i) d[i] = g[i] * gate[i];
          give(1, std::move(d));
        }
        if (wants(2)) {
          Tensor<Scalar> d(gate.shape());
          for (Index i = 0; i < gate.size(); ++i) d[i] = g[i] * (f[i] - a[i]);
          give(2, std::move(d));
        }
        break;
      }
      case OpKind::mul: {
        const Tensor<Scalar>& a = x(0);
        const Tensor<Scalar>& b = x(1);
        const Index block = b.size();
        const Index reps = block == 0 ? 0 : a.size() / block;
        if (wants(0)) {
          Tensor<Scalar> da(a.shape());
          for (Index r = 0; r < reps; ++r)
            for (Index i = 0; i < block; ++i) da[r * block + i] = g[r * block + i] * b[i];
          give(0, std::move(da));
        }
        if (wants(1)) {
          Tensor<Scalar> db(b.shape());
          for (Index r = 0; r < reps; ++r)
            for (Index i = 0; i < block; ++i) db[i] += g[r * block + i] * a[r * block + i];
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::scalar_mul:
        if (wants(0)) {
          const Scalar s = static_cast<Scalar>(n.attrs.scalar);
          give(0, map_unary(g, [s](Scalar v) { return s * v; }));
        }
        break;
      case OpKind::concat: {
        const Index axis = n.attrs.axis;
        const AxisSplit os = split_at(y.shape(), axis);
        Index offset = 0;
        for (std::size_t p = 0; p < ps.size(); ++p) {
          const Tensor<Scalar>& part = x(p);
          const AxisSplit s = split_at(part.shape(), axis);
          if (wants(p)) {
            Tensor<Scalar> dp(part.shape());
            const Index chunk = s.len * s.inner;
            for (Index o = 0; o < os.outer; ++o) {
              std::copy_n(g.data() + (o * os.len + offset) * os.inner, chunk, dp.data() + o * chunk);
            }
            give(p, std::move(dp));
          }
          offset += s.len;
        }
        break;
      }
      case OpKind::split:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          const SplitRange range = split_range(a.shape(), n.attrs);
          const AxisSplit as = split_at(a.shape(), n.attrs.axis);
          Tensor<Scalar> da(a.shape());
          const Index chunk = range.len * as.inner;
          for (Index o = 0; o < as.outer; ++o) {
            std::copy_n(g.data() + o * chunk, chunk,
                        da.data() + (o * as.len + range.offset) * as.inner);
          }
          give(0, std::move(da));
        }
        break;
      case OpKind::reshape:
        if (wants(0)) give(0, g.reshaped(x(0).shape()));
        break;
      case OpKind::tanh:
        if (wants(0)) {
          Tensor<Scalar> d(y.shape());
          for (Index i = 0; i < y.size(); ++i) d[i] = g[i] * (Scalar(1) - y[i] * y[i]);
          give(0, std::move(d));
        }
        break;
      case OpKind::sigmoid:
        if (wants(0)) {
          Tensor<Scalar> d(y.shape());
          for (Index i = 0; i < y.size(); ++i) d[i] = g[i] * y[i] * (Scalar(1) - y[i]);
          give(0, std::move(d));
        }
        break;
      case OpKind::relu:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          Tensor<Scalar> d(a.shape());
          for (Index i = 0; i < a.size(); ++i) d[i] = a[i] > 0 ? g[i] : Scalar(0);
          give(0, std::move(d));
        }
        break;
      case OpKind::elu:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          Tensor<Scalar> d(a.shape());
          for (Index i = 0; i < a.size(); ++i) d[i] = a[i] > 0 ? g[i] : g[i] * (y[i] + Scalar(1));
          give(0, std::move(d));
        }
        break;
      case OpKind::exp:
        if (wants(0)) {
          Tensor<Scalar> d(y.shape());
          for (Index i = 0; i < y.size(); ++i) d[i] = g[i] * y[i];
          give(0, std::move(d));
        }
        break;
      case OpKind::log:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          Tensor<Scalar> d(a.shape());
          for (Index i = 0; i < a.size(); ++i) d[i] = g[i] / a[i];
          give(0, std::move(d));
        }
        break;
      case OpKind::abs:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          Tensor<Scalar> d(a.shape());
          for (Index i = 0; i < a.size(); ++i) {
            d[i] = a[i] > 0 ? g[i] : (a[i] < 0 ? -g[i] : Scalar(0));
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::softmax:
        if (wants(0)) {
          Tensor<Scalar> d(y.shape());
          const Index cols = y.cols();
          for (Index r = 0; r < y.rows(); ++r) {
            const Scalar* py = y.data() + r * cols;
            const Scalar* pg = g.data() + r * cols;
            Scalar dot = 0;
            for (Index c = 0; c < cols; ++c) dot += pg[c] * py[c];
            Scalar* pd = d.data() + r * cols;
            for (Index c = 0; c < cols; ++c) pd[c] = py[c] * (pg[c] - dot);
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::log_softmax:
        if (wants(0)) {
          Tensor<Scalar> d(y.shape());
          const Index cols = y.cols();
          for (Index r = 0; r < y.rows(); ++r) {
            const Scalar* py = y.data() + r * cols;
            const Scalar* pg = g.data() + r * cols;
            Scalar total = 0;
            for (Index c = 0; c < cols; ++c) total += pg[c];
            Scalar* pd = d.data() + r * cols;
            for (Index c = 0; c < cols; ++c) {
              pd[c] = py[c] == neg_inf<Scalar>() ? Scalar(0) : pg[c] - std::exp(py[c]) * total;
            }
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::sum:
      case OpKind::max:
        if (wants(0)) {
          const Tensor<Scalar>& a = x(0);
          Tensor<Scalar> d(a.shape());
          if (n.attrs.axis == kAllAxes) {
            d.fill(g[0]);
          } else {
            const AxisSplit s = split_at(a.shape(), n.attrs.axis);
            for (Index o = 0; o < s.outer; ++o) {
              for (Index i = 0; i < s.inner; ++i) {
                const Scalar gv = g[o * s.inner + i];
                if (n.kind == OpKind::sum) {
                  for (Index l = 0; l < s.len; ++l) d[(o * s.len + l) * s.inner + i] = gv;
                } else {
                  const Scalar target = y[o * s.inner + i];
                  for (Index l = 0; l < s.len; ++l) {
                    if (a[(o * s.len + l) * s.inner + i] == target) {
                      d[(o * s.len + l) * s.inner + i] = gv;
                      break;
                    }
                  }
                }
              }
            }
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::transpose:
        if (wants(0)) give(0, forward_transpose(g));
        break;
      case OpKind::embedding_lookup:
        if (wants(0)) {
          const Tensor<Scalar>& table = x(0);
          Tensor<Scalar> d(table.shape());
          const Index dim = table.dim(1);
          for (std::size_t t = 0; t < n.attrs.ids.size(); ++t) {
            const Scalar* pg = g.data() + static_cast<Index>(t) * dim;
            Scalar* pd = d.data() + n.attrs.ids[t] * dim;
            for (Index c = 0; c < dim; ++c) pd[c] += pg[c];
          }
          give(0, std::move(d));
        }
        break;
      case OpKind::pairwise_add: {
        const Index nj = y.dim(0), dim = y.dim(1), ni = y.dim(2);
        if (wants(0)) {
          Tensor<Scalar> da({ni, dim});
          for (Index j = 0; j < nj; ++j)
            for (Index k = 0; k < dim; ++k) {
              const Scalar* pg = g.data() + (j * dim + k) * ni;
              for (Index i = 0; i < ni; ++i) da.data()[i * dim + k] += pg[i];
            }
          give(0, std::move(da));
        }
        if (wants(1)) {
          Tensor<Scalar> db({nj, dim});
          for (Index j = 0; j < nj; ++j)
            for (Index k = 0; k < dim; ++k) {
              const Scalar* pg = g.data() + (j * dim + k) * ni;
              Scalar acc = 0;
              for (Index i = 0; i < ni; ++i) acc += pg[i];
              db(j, k) = acc;
            }
          give(1, std::move(db));
        }
        break;
      }
      case OpKind::mask_add:
        if (wants(0)) give(0, Tensor<Scalar>(g));
        break;
      default:
        throw std::logic_error("backward: no rule for " + std::string(op_name(n.kind)));
    }
  }
  return grads;
}

// ------------------------------------------------------------ free functions

namespace {

template <typename Scalar>
Graph<Scalar>& same_graph(std::string_view op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
  return a.graph();
}

template <typename Scalar>
Var<Scalar> unary(OpKind kind, const Var<Scalar>& a, const OpAttrs& attrs = {}) {
  const NodeId in[] = {a.id()};
  return {a.graph(), a.graph().apply(kind, in, attrs)};
}

template <typename Scalar>
Var<Scalar> binary(OpKind kind, const Var<Scalar>& a, const Var<Scalar>& b) {
  Graph<Scalar>& g = same_graph(op_name(kind), a, b);
  const NodeId in[] = {a.id(), b.id()};
  return {g, g.apply(kind, in)};
}

template <typename Scalar>
Var<Scalar> ternary(OpKind kind, const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& c) {
  same_graph(op_name(kind), a, b);
  Graph<Scalar>& g = same_graph(op_name(kind), a, c);
  const NodeId in[] = {a.id(), b.id(), c.id()};
  return {g, g.apply(kind, in)};
}

}  // namespace

template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) { return binary(OpKind::matmul, a, b); }
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) { return binary(OpKind::add, a, b); }
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) { return binary(OpKind::mul, a, b); }
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) { return binary(OpKind::sub, a, b); }

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias) {
  return ternary(OpKind::linear, x, w, bias);
}

template <typename Scalar>
Var<Scalar> lerp(const Var<Scalar>& x, const Var<Scalar>& f, const Var<Scalar>& gate) {
  return ternary(OpKind::lerp, x, f, gate);
}
template <typename Scalar> Var<Scalar> pairwise_add(const Var<Scalar>& a, const Var<Scalar>& b) { return binary(OpKind::pairwise_add, a, b); }
template <typename Scalar> Var<Scalar> mask_add(const Var<Scalar>& s, const Var<Scalar>& m) { return binary(OpKind::mask_add, s, m); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, double s) {
  OpAttrs attrs;
  attrs.scalar = s;
  return unary(OpKind::scalar_mul, a, attrs);
}

template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat", "needs at least one input");
  std::vector<NodeId> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    same_graph("concat", parts[0], p);
    ids.push_back(p.id());
  }
  OpAttrs attrs;
  attrs.axis = axis;
  return {parts[0].graph(), parts[0].graph().apply(OpKind::concat, ids, attrs)};
}

template <typename Scalar>
std::vector<Var<Scalar>> split(const Var<Scalar>& a, Index axis, std::vector<Index> sizes) {
  std::vector<Var<Scalar>> out;
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.sizes = std::move(sizes);
  for (std::size_t p = 0; p < attrs.sizes.size(); ++p) {
    attrs.part = static_cast<Index>(p);
    out.push_back(unary(OpKind::split, a, attrs));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(OpKind::reshape, a, attrs);
}

template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& a) { return unary(OpKind::tanh, a); }
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& a) { return unary(OpKind::sigmoid, a); }
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& a) { return unary(OpKind::relu, a); }
template <typename Scalar> Var<Scalar> elu(const Var<Scalar>& a) { return unary(OpKind::elu, a); }
template <typename Scalar> Var<Scalar> exp(const Var<Scalar>& a) { return unary(OpKind::exp, a); }
template <typename Scalar> Var<Scalar> log(const Var<Scalar>& a) { return unary(OpKind::log, a); }
template <typename Scalar> Var<Scalar> abs(const Var<Scalar>& a) { return unary(OpKind::abs, a); }
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& a) { return unary(OpKind::softmax, a); }
template <typename Scalar> Var<Scalar> log_softmax(const Var<Scalar>& a) { return unary(OpKind::log_softmax, a); }
template <typename Scalar> Var<Scalar> transpose(const Var<Scalar>& a) { return unary(OpKind::transpose, a); }

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a, Index axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return unary(OpKind::sum, a, attrs);
}

template <typename Scalar>
Var<Scalar> max(const Var<Scalar>& a, Index axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return unary(OpKind::max, a, attrs);
}

template <typename Scalar>
Var<Scalar> embedding_lookup(const Var<Scalar>& table, std::vector<Index> ids) {
  OpAttrs attrs;
  attrs.ids = std::move(ids);
  return unary(OpKind::embedding_lookup, table, attrs);
}

#define BLOSA_INSTANTIATE_GRAPH(S)                                                     \
  template class Gradients<S>;                                                         \
  template class Graph<S>;                                                             \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                \
  template Var<S> add(const Var<S>&, const Var<S>&);                                   \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                   \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                   \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                 \
  template Var<S> lerp(const Var<S>&, const Var<S>&, const Var<S>&);                   \
  template Var<S> scale(const Var<S>&, double);                                        \
  template Var<S> concat(std::span<const Var<S>>, Index);                              \
  template std::vector<Var<S>> split(const Var<S>&, Index, std::vector<Index>);        \
  template Var<S> reshape(const Var<S>&, Shape);                                       \
  template Var<S> tanh(const Var<S>&);                                                 \
  template Var<S> sigmoid(const Var<S>&);                                              \
  template Var<S> relu(const Var<S>&);                                                 \
  template Var<S> elu(const Var<S>&);                                                  \
  template Var<S> exp(const Var<S>&);                                                  \
  template Var<S> log(const Var<S>&);                                                  \
  template Var<S> abs(const Var<S>&);                                                  \
  template Var<S> softmax(const Var<S>&);                                              \
  template Var<S> log_softmax(const Var<S>&);                                          \
  template Var<S> sum(const Var<S>&, Index);                                           \
  template Var<S> max(const Var<S>&, Index);                                           \
  template Var<S> transpose(const Var<S>&);                                            \
  template Var<S> embedding_lookup(const Var<S>&, std::vector<Index>);                 \
  template Var<S> pairwise_add(const Var<S>&, const Var<S>&);                          \
  template Var<S> mask_add(const Var<S>&, const Var<S>&);

BLOSA_INSTANTIATE_GRAPH(float)
BLOSA_INSTANTIATE_GRAPH(double)

}  // namespace blosa
