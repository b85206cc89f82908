#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blosa/tensor.hpp"

namespace blosa {

// Shape rules (row-major, last axis is the "column" axis):
//   matmul           [a,b] x [b,c] -> [a,c];  [b] x [b,c] -> [c]
//   add, sub, mul    rhs shape equals the trailing axes of lhs; rhs broadcasts over the rest
//   linear           x [a,b] or [b], W [b,c], bias [c] -> x W + bias
//   lerp             x, f, g of one shape -> x + g (.) (f - x)
//   scalar_mul       any -> same
//   concat(axis)     all inputs agree except on `axis`
//   split(axis, sizes, part)  sizes sum to the axis length; returns part `part`
//   reshape(shape)   equal element count
//   tanh sigmoid relu elu exp log abs   elementwise
//   softmax, log_softmax   over the last axis; an all -inf row yields zeros (softmax only)
//   sum(axis), max(axis)   remove `axis`; sum(kAllAxes) -> rank 0
//   transpose        swaps the last two axes (rank >= 2)
//   embedding_lookup table [N,d], ids -> [len(ids), d]
//   pairwise_add     A [n_i,d], B [n_j,d] -> S [n_j,d,n_i], S(j,k,i) = A(i,k) + B(j,k)
//   mask_add         S [a,b,c], M [a,c] -> S(j,k,i) + M(j,i); M is never differentiated
enum class OpKind : int {
  leaf,
  matmul,
  add,
  mul,
  scalar_mul,
  concat,
  split,
  reshape,
  tanh,
  sigmoid,
  relu,
  elu,
  exp,
  log,
  abs,
  softmax,
  log_softmax,
  sum,
  max,
  transpose,
  embedding_lookup,
  pairwise_add,
  mask_add,
  sub,
  linear,
  lerp,
};

std::string_view op_name(OpKind kind);

/// Every differentiable kind, in declaration order.
std::span<const OpKind> differentiable_kinds();

inline constexpr Index kAllAxes = -1;

struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct OpAttrs {
  Index axis = 0;
  double scalar = 1.0;
  std::vector<Index> sizes;
  Index part = 0;
  Shape shape;
  std::vector<Index> ids;
};

template <typename Scalar>
class Gradients {
public:
  explicit Gradients(std::size_t n) : grads_(n) {}

  bool has(NodeId id) const { return id.index < grads_.size() && !grads_[id.index].empty(); }
  const Tensor<Scalar>& operator[](NodeId id) const;
  Tensor<Scalar>& slot(NodeId id) { return grads_.at(id.index); }
  std::size_t size() const noexcept { return grads_.size(); }

private:
  std::vector<Tensor<Scalar>> grads_;
};

// Eager tape. Nodes are appended in construction order so every parent id is
// smaller than its child's id, and the reverse of that order is a valid
// backward schedule. Single-writer.
template <typename Scalar>
class Graph {
public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  /// Differentiable leaf owning its value.
  NodeId variable(Tensor<Scalar> value, std::string label = {});
  /// Non-differentiable leaf.
  NodeId constant(Tensor<Scalar> value, std::string label = {});
  /// Differentiable leaf that reads `value` in place; `value` must outlive the graph.
  NodeId parameter(const Tensor<Scalar>& value, std::string label = {});

  NodeId apply(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

  const Tensor<Scalar>& value(NodeId id) const;
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& parents(NodeId id) const { return node(id).parents; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  const std::string& label(NodeId id) const { return node(id).label; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss.
  Gradients<Scalar> backward(NodeId loss) const;

private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> parents;
    OpAttrs attrs;
    Tensor<Scalar> value;
    const Tensor<Scalar>* borrowed = nullptr;
    bool requires_grad = false;
    std::string label;
  };

  const Node& node(NodeId id) const;
  NodeId push(Node node);

  std::vector<Node> nodes_;
};

template <typename Scalar>
Gradients<Scalar> backward(const Graph<Scalar>& graph, NodeId loss) {
  return graph.backward(loss);
}

// Handle pairing a graph with a node, so equations read as expressions.
template <typename Scalar>
class Var {
public:
  Var() = default;
  Var(Graph<Scalar>& graph, NodeId id) : graph_(&graph), id_(id) {}

  Graph<Scalar>& graph() const { return *graph_; }
  NodeId id() const noexcept { return id_; }
  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  bool valid() const noexcept { return graph_ != nullptr; }

private:
  Graph<Scalar>* graph_ = nullptr;
  NodeId id_{};
};

template <typename Scalar>
Var<Scalar> variable(Graph<Scalar>& g, Tensor<Scalar> value, std::string label = {}) {
  return {g, g.variable(std::move(value), std::move(label))};
}
template <typename Scalar>
Var<Scalar> constant(Graph<Scalar>& g, Tensor<Scalar> value, std::string label = {}) {
  return {g, g.constant(std::move(value), std::move(label))};
}

template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias);
template <typename Scalar>
Var<Scalar> lerp(const Var<Scalar>& x, const Var<Scalar>& f, const Var<Scalar>& gate);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, double s);
template <typename Scalar> Var<Scalar> concat(std::span<const Var<Scalar>> parts, Index axis);
template <typename Scalar>
std::vector<Var<Scalar>> split(const Var<Scalar>& a, Index axis, std::vector<Index> sizes);
template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> elu(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> exp(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> log(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> abs(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> log_softmax(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a, Index axis = kAllAxes);
template <typename Scalar> Var<Scalar> max(const Var<Scalar>& a, Index axis);
template <typename Scalar> Var<Scalar> transpose(const Var<Scalar>& a);
template <typename Scalar>
Var<Scalar> embedding_lookup(const Var<Scalar>& table, std::vector<Index> ids);
template <typename Scalar> Var<Scalar> pairwise_add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mask_add(const Var<Scalar>& s, const Var<Scalar>& m);

template <typename Scalar>
Var<Scalar> concat(std::initializer_list<Var<Scalar>> parts, Index axis) {
  return concat(std::span<const Var<Scalar>>(parts.begin(), parts.size()), axis);
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.value().rank() >= b.value().rank() ? add(a, b) : add(b, a);
}
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.value().rank() >= b.value().rank()) return sub(a, b);
  return add(scale(b, -1.0), a);
}
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.value().rank() >= b.value().rank() ? mul(a, b) : mul(b, a);
}
template <typename Scalar>
Var<Scalar> operator*(double s, const Var<Scalar>& a) {
  return scale(a, s);
}

}  // namespace blosa
