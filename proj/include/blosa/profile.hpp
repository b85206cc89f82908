#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <vector>

#include "blosa/cost_model.hpp"

namespace blosa {

struct ProfileRecord {
  BenchKind kind = BenchKind::biblosa;
  Index n = 0, r = 0, m = 0;
  Index analytic_elems = 0;
  std::size_t measured_peak_elems = 0;  // live activation + gradient elements, parameters excluded
  double forward_ms = 0;
  double backward_ms = 0;
};

struct ProfileOptions {
  Index d_e = 32;
  Index r = 0;  // 0 selects select_block_length(n); ignored by full_san
  int repeats = 3;
  std::uint64_t seed = 1;
};

/// One warm-up pass, then `repeats` forward+backward passes of loss = sum(u_bi)
/// in float32. Peak is the high-water mark of one pass; times are medians.
ProfileRecord profile_run(BenchKind kind, Index n, const ProfileOptions& opt);

struct ScalingResult {
  std::vector<ProfileRecord> records;
  std::map<BenchKind, double> memory_slope;
};

/// Profiles every (kind, n); `lengths` must hold at least 2 ascending values.
ScalingResult scaling_experiment(const std::vector<Index>& lengths,
                                 const std::vector<BenchKind>& kinds, const ProfileOptions& opt);

extern const char* const kProfileCsvHeader;
void write_profile_csv(std::ostream& os, const std::vector<ProfileRecord>& records);

}  // namespace blosa
