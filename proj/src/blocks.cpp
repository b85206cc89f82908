#include "blosa/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace blosa {

BlockPlan BlockPlan::make(Index n, Index r) {
  if (n < 1) throw std::invalid_argument("block plan needs n >= 1");
  if (r < 1) throw std::invalid_argument("block length must be >= 1");
  const Index m = (n + r - 1) / r;
  return {n, r, m, m * r - n};
}

Index select_block_length(Index n) {
  if (n < 1) throw std::invalid_argument("select_block_length: n must be >= 1");
  const auto r = static_cast<Index>(std::floor(std::cbrt(2.0 * static_cast<double>(n)) + 0.5));
  return std::clamp<Index>(r, 1, n);
}

Index select_block_length_batched(double mu, double sigma, Index batch) {
  if (!(mu > 0.0)) throw std::invalid_argument("select_block_length_batched: mu must be positive");
  if (sigma < 0.0) throw std::invalid_argument("select_block_length_batched: sigma must be >= 0");
  if (batch < 1) throw std::invalid_argument("select_block_length_batched: batch must be >= 1");
  const double bound = sigma * std::sqrt(2.0 * std::log(static_cast<double>(batch))) + mu;
  const auto r = static_cast<Index>(std::floor(std::cbrt(2.0 * bound) + 0.5));
  return std::max<Index>(r, 1);
}

template <typename Scalar>
Partition<Scalar> partition(const Var<Scalar>& x, Index r) {
  if (x.value().rank() != 2) throw ShapeError("partition", "expects [n, d]");
  Partition<Scalar> out;
  out.plan = BlockPlan::make(x.dim(0), r);
  const BlockPlan& plan = out.plan;
  const Index n = plan.n;
  const Index tail = n - (plan.m - 1) * r;
  if (plan.m == 1) {
    out.blocks.push_back(x);
  } else {
    std::vector<Index> sizes(static_cast<std::size_t>(plan.m), r);
    sizes.back() = tail;
    out.blocks = split(x, 0, std::move(sizes));
  }
  if (plan.pad > 0) {
    Var<Scalar>& last = out.blocks.back();
    last = concat({last, constant(x.graph(), Tensor<Scalar>({plan.pad, x.dim(1)}), "pad")}, 0);
  }
  out.valid.assign(static_cast<std::size_t>(plan.m), Validity(static_cast<std::size_t>(r), true));
  for (Index t = plan.n; t < plan.m * r; ++t) {
    out.valid.back()[static_cast<std::size_t>(t % r)] = false;
  }
  return out;
}

template <typename Scalar>
Var<Scalar> departition(std::span<const Var<Scalar>> blocks, const BlockPlan& plan) {
  if (static_cast<Index>(blocks.size()) != plan.m) {
    throw ShapeError("departition", std::to_string(blocks.size()) + " blocks for a plan of " +
                                        std::to_string(plan.m));
  }
  if (plan.pad == 0) return plan.m == 1 ? blocks[0] : concat(blocks, 0);
  std::vector<Var<Scalar>> parts(blocks.begin(), blocks.end());
  parts.back() = split(parts.back(), 0, {plan.r - plan.pad, plan.pad})[0];
  return plan.m == 1 ? parts[0] : concat<Scalar>(parts, 0);
}

template Partition<float> partition(const Var<float>&, Index);
template Partition<double> partition(const Var<double>&, Index);
template Var<float> departition(std::span<const Var<float>>, const BlockPlan&);
template Var<double> departition(std::span<const Var<double>>, const BlockPlan&);

}  // namespace blosa
