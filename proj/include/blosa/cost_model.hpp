#pragma once

#include <span>
#include <string_view>

#include "blosa/tensor.hpp"

namespace blosa {

enum class BenchKind { biblosa, full_san };

std::string_view bench_kind_name(BenchKind kind);
BenchKind parse_bench_kind(std::string_view name);

/// Alignment-score elements materialized by one masked attention pass, with
/// score width w per token pair.
struct CostModel {
  Index n = 0, r = 0, m = 0, w = 1;
  Index intra_elems = 0;     // m * r^2 * w
  Index inter_elems = 0;     // m^2 * w
  Index full_san_elems = 0;  // n^2 * w

  Index blocked_total() const { return intra_elems + inter_elems; }
  Index total(BenchKind kind) const {
    return kind == BenchKind::biblosa ? blocked_total() : full_san_elems;
  }
};

CostModel count_score_elements(Index n, Index r, Index w);

/// xi(r) = r^2 ceil(n/r) + ceil(n/r)^2.
Index xi(Index n, Index r);

/// Smallest r in [1, n] minimizing xi.
Index brute_force_block_length(Index n);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace blosa
