#include "blosa/param_store.hpp"

#include <stdexcept>

namespace blosa {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::embedding: return "embedding";
  }
  return "weight";
}

ParamRole parse_role(std::string_view name) {
  if (name == "weight") return ParamRole::weight;
  if (name == "bias") return ParamRole::bias;
  if (name == "embedding") return ParamRole::embedding;
  throw std::invalid_argument("unknown parameter role '" + std::string(name) + "'");
}

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::add(std::string path, Tensor<Scalar> value, ParamRole role) {
  if (index_.contains(path)) throw std::invalid_argument("duplicate parameter path '" + path + "'");
  index_.emplace(path, entries_.size());
  entries_.push_back({std::move(path), role, std::move(value)});
  return entries_.back().value;
}

template <typename Scalar>
const ParamEntry<Scalar>& ParamStore<Scalar>::entry(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("no parameter at path '" + path + "'");
  return entries_[it->second];
}

template <typename Scalar>
Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& path) {
  return const_cast<Tensor<Scalar>&>(std::as_const(*this).at(path));
}

template <typename Scalar>
const Tensor<Scalar>& ParamStore<Scalar>::at(const std::string& path) const {
  return entry(path).value;
}

template <typename Scalar>
Index ParamStore<Scalar>::total_elements() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename Scalar>
Var<Scalar> ParamBinder<Scalar>::operator()(const std::string& path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return {*graph_, it->second};
  const NodeId id = graph_->parameter(store_->at(path), path);
  bound_.emplace(path, id);
  return {*graph_, id};
}

template <typename Scalar>
GradMap<Scalar> ParamBinder<Scalar>::collect(const Gradients<Scalar>& grads) const {
  GradMap<Scalar> out;
  for (const auto& [path, id] : bound_) {
    out.emplace(path, grads.has(id) ? grads[id] : Tensor<Scalar>(graph_->value(id).shape()));
  }
  return out;
}

template <typename Scalar>
void accumulate(GradMap<Scalar>& dst, const GradMap<Scalar>& src, Scalar weight) {
  for (const auto& [path, g] : src) {
    auto it = dst.find(path);
    if (it == dst.end()) {
      Tensor<Scalar> t = g;
      if (weight != Scalar(1)) t.array() *= weight;
      dst.emplace(path, std::move(t));
    } else {
      if (it->second.shape() != g.shape()) {
        throw ShapeError("accumulate", "gradient shape mismatch at '" + path + "'");
      }
      it->second.array() += weight * g.array();
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBinder<float>;
template class ParamBinder<double>;
template void accumulate(GradMap<float>&, const GradMap<float>&, float);
template void accumulate(GradMap<double>&, const GradMap<double>&, double);

}  // namespace blosa
