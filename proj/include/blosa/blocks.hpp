#pragma once

#include <vector>

#include "blosa/attention.hpp"

namespace blosa {

// n tokens cut into m = ceil(n / r) blocks of length r; the last block carries
// `pad` zero columns.
struct BlockPlan {
  Index n = 0;
  Index r = 1;
  Index m = 0;
  Index pad = 0;

  static BlockPlan make(Index n, Index r);
  Index block_of(Index token) const { return token / r; }
  bool operator==(const BlockPlan&) const = default;
};

/// Memory-optimal block length for length n: round((2n)^(1/3)), clamped to [1, n].
Index select_block_length(Index n);

/// Block length for lengths ~ N(mu, sigma^2) in batches of B, sized for the
/// expected batch maximum bound sigma*sqrt(2 ln B) + mu.
Index select_block_length_batched(double mu, double sigma, Index batch);

template <typename Scalar>
struct Partition {
  std::vector<Var<Scalar>> blocks;    // each [r, d]
  std::vector<Validity> valid;        // per block, r flags
  BlockPlan plan;
};

template <typename Scalar>
Partition<Scalar> partition(const Var<Scalar>& x, Index r);

/// Concatenates blocks and drops the trailing pad rows.
template <typename Scalar>
Var<Scalar> departition(std::span<const Var<Scalar>> blocks, const BlockPlan& plan);

}  // namespace blosa
