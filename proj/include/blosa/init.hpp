#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "blosa/graph.hpp"

namespace blosa {

using Rng = std::mt19937_64;

/// Deterministic child seed for a named sub-stream ("init", "dropout", "data", ...).
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);
inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  return Rng(substream_seed(seed, name, index));
}

/// Glorot/Xavier uniform: entries i.i.d. on [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
/// Returned as [fan_in, fan_out], the layout used for `x * W`.
template <typename Scalar>
Tensor<Scalar> glorot_init(Index fan_in, Index fan_out, Rng& rng);

double glorot_limit(Index fan_in, Index fan_out);

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, double lo, double hi, Rng& rng);

// Inverted dropout: Bernoulli(keep_prob) mask scaled by 1/keep_prob while
// training, identity otherwise.
struct DropoutContext {
  bool training = false;
  double keep_prob = 1.0;
  Rng* rng = nullptr;
};

template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double keep_prob, Rng* rng, bool training);

template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, const DropoutContext& ctx) {
  return dropout(x, ctx.keep_prob, ctx.rng, ctx.training);
}

}  // namespace blosa
