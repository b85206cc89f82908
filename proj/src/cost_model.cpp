#include "blosa/cost_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace blosa {

std::string_view bench_kind_name(BenchKind kind) {
  return kind == BenchKind::biblosa ? "biblosa" : "full_san";
}

BenchKind parse_bench_kind(std::string_view name) {
  if (name == "biblosa") return BenchKind::biblosa;
  if (name == "full_san") return BenchKind::full_san;
  throw std::invalid_argument("unknown bench kind '" + std::string(name) + "'");
}

CostModel count_score_elements(Index n, Index r, Index w) {
  if (n < 1 || r < 1 || w < 1) throw std::invalid_argument("count_score_elements: n, r, w must be >= 1");
  CostModel c;
  c.n = n;
  c.r = r;
  c.m = (n + r - 1) / r;
  c.w = w;
  c.intra_elems = c.m * r * r * w;
  c.inter_elems = c.m * c.m * w;
  c.full_san_elems = n * n * w;
  return c;
}

Index xi(Index n, Index r) {
  return count_score_elements(n, r, 1).blocked_total();
}

Index brute_force_block_length(Index n) {
  if (n < 1) throw std::invalid_argument("brute_force_block_length: n must be >= 1");
  Index best = 1;
  Index best_xi = xi(n, 1);
  for (Index r = 2; r <= n; ++r) {
    const Index v = xi(n, r);
    if (v < best_xi) {
      best = r;
      best_xi = v;
    }
  }
  return best;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("loglog_slope: size mismatch");
  if (x.size() < 2) throw std::invalid_argument("loglog_slope: needs at least 2 points");
  const auto k = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::invalid_argument("loglog_slope: values must be positive");
    sx += std::log(x[i]);
    sy += std::log(y[i]);
  }
  const double mx = sx / k, my = sy / k;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw std::invalid_argument("loglog_slope: x values must not all be equal");
  return sxy / sxx;
}

}  // namespace blosa
