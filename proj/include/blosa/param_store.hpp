#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "blosa/graph.hpp"

namespace blosa {

/// What a parameter is, for regularisation and initialisation purposes.
enum class ParamRole { weight, bias, embedding };

std::string_view role_name(ParamRole role);
ParamRole parse_role(std::string_view name);

template <typename Scalar>
struct ParamEntry {
  std::string path;
  ParamRole role = ParamRole::weight;
  Tensor<Scalar> value;
};

// Named learnable tensors in insertion order. Paths are unique.
template <typename Scalar>
class ParamStore {
public:
  Tensor<Scalar>& add(std::string path, Tensor<Scalar> value, ParamRole role);

  bool contains(const std::string& path) const { return index_.contains(path); }
  Tensor<Scalar>& at(const std::string& path);
  const Tensor<Scalar>& at(const std::string& path) const;
  const ParamEntry<Scalar>& entry(const std::string& path) const;

  std::vector<ParamEntry<Scalar>>& entries() noexcept { return entries_; }
  const std::vector<ParamEntry<Scalar>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  Index total_elements() const;

private:
  std::vector<ParamEntry<Scalar>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients keyed by parameter path.
template <typename Scalar>
using GradMap = std::map<std::string, Tensor<Scalar>>;

// Binds store entries into one graph, each path at most once, so every use of
// a parameter within the graph shares one leaf.
template <typename Scalar>
class ParamBinder {
public:
  ParamBinder(Graph<Scalar>& graph, const ParamStore<Scalar>& store)
      : graph_(&graph), store_(&store) {}

  Var<Scalar> operator()(const std::string& path);
  Graph<Scalar>& graph() const { return *graph_; }
  const ParamStore<Scalar>& store() const { return *store_; }
  const std::map<std::string, NodeId>& bound() const { return bound_; }

  /// Gradients of every bound parameter; zeros for those the loss does not reach.
  GradMap<Scalar> collect(const Gradients<Scalar>& grads) const;

private:
  Graph<Scalar>* graph_;
  const ParamStore<Scalar>* store_;
  std::map<std::string, NodeId> bound_;
};

/// dst += src, path by path, in path order.
template <typename Scalar>
void accumulate(GradMap<Scalar>& dst, const GradMap<Scalar>& src, Scalar weight = Scalar(1));

}  // namespace blosa
