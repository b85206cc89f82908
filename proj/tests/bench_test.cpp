#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "blosa/blocks.hpp"
#include "blosa/cost_model.hpp"
#include "blosa/profile.hpp"

using namespace blosa;

namespace {

double analytic_slope(BenchKind kind, const std::vector<Index>& lengths) {
  std::vector<double> x, y;
  for (Index n : lengths) {
    const Index r = kind == BenchKind::biblosa ? select_block_length(n) : n;
    x.push_back(static_cast<double>(n));
    y.push_back(static_cast<double>(count_score_elements(n, r, 1).total(kind)));
  }
  return loglog_slope(x, y);
}

}  // namespace

TEST(CostModel, SmallSequence) {
  const auto c = count_score_elements(4, 2, 1);
  EXPECT_EQ(c.m, 2);
  EXPECT_EQ(c.intra_elems, 8);
  EXPECT_EQ(c.inter_elems, 4);
  EXPECT_EQ(c.blocked_total(), 12);
  EXPECT_EQ(c.full_san_elems, 16);
}

TEST(CostModel, LongSequence) {
  const auto c = count_score_elements(384, 9, 1);
  EXPECT_EQ(c.m, 43);
  EXPECT_EQ(c.intra_elems, 3483);
  EXPECT_EQ(c.inter_elems, 1849);
  EXPECT_EQ(c.blocked_total(), 5332);
  EXPECT_EQ(c.full_san_elems, 147456);
}

TEST(CostModel, ScoreWidthScalesEveryTerm) {
  const auto one = count_score_elements(100, 6, 1);
  const auto wide = count_score_elements(100, 6, 32);
  EXPECT_EQ(wide.intra_elems, 32 * one.intra_elems);
  EXPECT_EQ(wide.inter_elems, 32 * one.inter_elems);
  EXPECT_EQ(wide.full_san_elems, 32 * one.full_san_elems);
}

TEST(CostModel, SingleBlockCostsOneMoreThanFull) {
  for (Index n : {1, 7, 50}) {
    const auto c = count_score_elements(n, n, 1);
    EXPECT_EQ(c.blocked_total(), n * n + 1);
    EXPECT_EQ(xi(n, n), n * n + 1);
  }
}

TEST(CostModel, BlockedDominatesFullFromSixteen) {
  for (Index n = 16; n <= 512; ++n) {
    const auto c = count_score_elements(n, select_block_length(n), 1);
    EXPECT_LT(c.blocked_total(), c.full_san_elems) << n;
  }
}

TEST(CostModel, SlopeOfExactPowerLaw) {
  std::vector<double> x{2, 4, 8, 16, 32}, y;
  for (double v : x) y.push_back(v * v);
  EXPECT_NEAR(loglog_slope(x, y), 2.0, 1e-9);
  const std::vector<double> one{1.0};
  EXPECT_THROW(loglog_slope(one, one), std::invalid_argument);
}

TEST(CostModel, AnalyticSlopes) {
  const std::vector<Index> lengths{64, 128, 256, 384, 512};
  const double blocked = analytic_slope(BenchKind::biblosa, lengths);
  EXPECT_GE(blocked, 1.25);
  EXPECT_LE(blocked, 1.45);
  const double full = analytic_slope(BenchKind::full_san, lengths);
  EXPECT_GE(full, 1.95);
  EXPECT_LE(full, 2.05);
}

TEST(CostModel, KindNamesRoundTrip) {
  for (BenchKind k : {BenchKind::biblosa, BenchKind::full_san}) {
    EXPECT_EQ(parse_bench_kind(bench_kind_name(k)), k);
  }
  EXPECT_THROW(parse_bench_kind("rnn"), std::invalid_argument);
}

TEST(Profile, RecordIsConsistentWithCostModel) {
  ProfileOptions opt;
  opt.d_e = 8;
  opt.repeats = 3;
  const auto rec = profile_run(BenchKind::biblosa, 40, opt);
  EXPECT_EQ(rec.n, 40);
  EXPECT_EQ(rec.r, select_block_length(40));
  EXPECT_EQ(rec.m, (40 + rec.r - 1) / rec.r);
  EXPECT_GT(rec.analytic_elems, 0);
  EXPECT_GE(rec.measured_peak_elems, static_cast<std::size_t>(rec.analytic_elems));
  EXPECT_GE(rec.forward_ms, 0.0);
  EXPECT_GE(rec.backward_ms, 0.0);

  const auto full = profile_run(BenchKind::full_san, 40, opt);
  EXPECT_EQ(full.r, 40);
  EXPECT_GE(full.measured_peak_elems, static_cast<std::size_t>(full.analytic_elems));
}

TEST(Profile, PeakMemoryIsDeterministic) {
  ProfileOptions opt;
  opt.d_e = 8;
  opt.repeats = 3;
  for (BenchKind k : {BenchKind::biblosa, BenchKind::full_san}) {
    EXPECT_EQ(profile_run(k, 33, opt).measured_peak_elems,
              profile_run(k, 33, opt).measured_peak_elems);
  }
}

TEST(Profile, FixedBlockLengthIsHonoured) {
  ProfileOptions opt;
  opt.d_e = 8;
  opt.repeats = 3;
  opt.r = 5;
  const auto rec = profile_run(BenchKind::biblosa, 23, opt);
  EXPECT_EQ(rec.r, 5);
  EXPECT_EQ(rec.m, 5);
}

TEST(Scaling, FullAttentionGrowsFasterThanBlocked) {
  ProfileOptions opt;
  opt.d_e = 8;
  opt.repeats = 3;
  const auto res = scaling_experiment({32, 64, 128}, {BenchKind::biblosa, BenchKind::full_san}, opt);
  EXPECT_EQ(res.records.size(), 6u);
  EXPECT_LT(res.memory_slope.at(BenchKind::biblosa), res.memory_slope.at(BenchKind::full_san));
  EXPECT_THROW(scaling_experiment({64}, {BenchKind::biblosa}, opt), std::invalid_argument);
}

TEST(Scaling, CsvHasHeaderAndOneRowPerRecord) {
  ProfileOptions opt;
  opt.d_e = 4;
  opt.repeats = 3;
  const auto res = scaling_experiment({8, 16}, {BenchKind::biblosa}, opt);
  std::ostringstream os;
  write_profile_csv(os, res.records);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kProfileCsvHeader);
  EXPECT_EQ(line, "kind,n,r,m,analytic_elems,measured_peak_elems,forward_ms,backward_ms");
  int rows = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(line.rfind("biblosa,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}
