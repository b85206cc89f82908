#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blosa/cost_model.hpp"
#include "blosa/encoder.hpp"
#include "blosa/gradcheck.hpp"
#include "test_util.hpp"

using namespace blosa;
using blosa::testing::max_abs_diff;
using blosa::testing::max_abs_diff_rows;
using blosa::testing::random_tensor;

namespace {

AttnConfig attn_config(Index d) {
  AttnConfig cfg;
  cfg.d_e = d;
  cfg.d_h = d;
  return cfg;
}

// mBloSA parameters with non-zero biases so no unit starts degenerate.
ParamStore<double> mblosa_store(Index d, std::uint64_t seed) {
  ParamStore<double> store;
  Rng rng(seed);
  init_mblosa(store, "m", d, rng);
  std::uint64_t s = seed;
  for (auto& e : store.entries()) {
    if (e.role == ParamRole::bias) e.value = random_tensor(e.value.shape(), ++s, -0.5, 0.5);
  }
  return store;
}

Tensor<double> run_mblosa(const ParamStore<double>& store, const Tensor<double>& x, MaskKind kind,
                          Index r) {
  Graph<double> g;
  ParamBinder<double> p(g, store);
  return mblosa(constant(g, x), kind, r, MBlosaParams<double>::bind(p, "m"), attn_config(x.dim(1)))
      .value();
}

EncoderConfig small_encoder(Index r = 2) {
  EncoderConfig cfg;
  cfg.vocab = 10;
  cfg.d_e = 8;
  cfg.d_h = 8;
  cfg.block_len = r;
  return cfg;
}

ParamStore<double> encoder_store(const EncoderConfig& cfg, std::uint64_t seed) {
  ParamStore<double> store;
  Rng rng(seed);
  init_encoder(store, cfg, rng);
  std::uint64_t s = seed;
  for (auto& e : store.entries()) {
    if (e.role == ParamRole::bias) e.value = random_tensor(e.value.shape(), ++s, -0.5, 0.5);
    if (e.role == ParamRole::embedding) e.value = random_tensor(e.value.shape(), ++s, -1.0, 1.0);
  }
  return store;
}

}  // namespace

TEST(BlockLength, ExactCubes) {
  EXPECT_EQ(select_block_length(4), 2);
  EXPECT_EQ(select_block_length(32), 4);
}

TEST(BlockLength, HundredRoundsToSixWithinOneOfOptimum) {
  EXPECT_EQ(select_block_length(100), 6);
  EXPECT_EQ(brute_force_block_length(100), 5);
  EXPECT_EQ(xi(100, 5), 900);
  EXPECT_EQ(xi(100, 6), 901);
}

TEST(BlockLength, ClampedToSequenceLength) {
  EXPECT_EQ(select_block_length(1), 1);
  EXPECT_EQ(select_block_length(2), 2);
  EXPECT_THROW(select_block_length(0), std::invalid_argument);
}

TEST(BlockLength, WithinOneOfBruteForce) {
  for (Index n = 16; n <= 512; ++n) {
    EXPECT_LE(std::abs(select_block_length(n) - brute_force_block_length(n)), 1) << n;
  }
}

TEST(BlockLength, BatchedDegenerateCases) {
  for (Index mu : {8, 24, 100}) {
    EXPECT_EQ(select_block_length_batched(static_cast<double>(mu), 0.0, 64), select_block_length(mu));
    EXPECT_EQ(select_block_length_batched(static_cast<double>(mu), 7.0, 1), select_block_length(mu));
  }
}

TEST(BlockLength, BatchedClosedForm) {
  EXPECT_EQ(select_block_length_batched(20.0, 10.0, 64), 5);
  EXPECT_THROW(select_block_length_batched(0.0, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(select_block_length_batched(-3.0, 1.0, 4), std::invalid_argument);
}

TEST(BlockPlan, CountsAndPadding) {
  EXPECT_EQ(BlockPlan::make(6, 2), (BlockPlan{6, 2, 3, 0}));
  EXPECT_EQ(BlockPlan::make(5, 2), (BlockPlan{5, 2, 3, 1}));
  EXPECT_EQ(BlockPlan::make(3, 8), (BlockPlan{3, 8, 1, 5}));
}

TEST(Partition, LastBlockIsZeroPadded) {
  Graph<double> g;
  const Tensor<double> x = random_tensor({5, 3}, 1);
  const auto part = partition(constant(g, x), 2);
  ASSERT_EQ(part.blocks.size(), 3u);
  const auto& last = part.blocks[2].value();
  for (Index k = 0; k < 3; ++k) {
    EXPECT_EQ(last(0, k), x(4, k));
    EXPECT_EQ(last(1, k), 0.0);
  }
  EXPECT_EQ(part.valid[2], (Validity{true, false}));
  EXPECT_EQ(part.valid[0], (Validity{true, true}));
}

TEST(Partition, RoundTripIsBitExact) {
  for (Index n : {1, 2, 5, 6, 7, 12, 13}) {
    for (Index r : {1, 2, 3, 5, 16}) {
      Graph<double> g;
      const Tensor<double> x = random_tensor({n, 4}, static_cast<std::uint64_t>(n * 31 + r));
      const auto part = partition(constant(g, x), r);
      EXPECT_EQ(departition<double>(part.blocks, part.plan).value(), x) << n << "," << r;
    }
  }
}

TEST(IntraBlock, SingleBlockEqualsWholeSequence) {
  const auto store = mblosa_store(3, 2);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MaskedAttnParams<double>::bind(p, "m/intra");
  const auto x = constant(g, random_tensor({6, 3}, 3));
  const auto h = intra_block(partition(x, 6), MaskKind::forward, params, attn_config(3));
  const auto whole = masked_self_attention(x, Mask(6, MaskKind::forward), params, attn_config(3));
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].value(), whole.value());
}

TEST(IntraBlock, SharedParametersCommuteWithBlockOrder) {
  const auto store = mblosa_store(3, 4);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MaskedAttnParams<double>::bind(p, "m/intra");
  const Tensor<double> x = random_tensor({6, 3}, 5);
  Tensor<double> swapped = x;
  swapped.matrix().topRows(2) = x.matrix().bottomRows(2);
  swapped.matrix().bottomRows(2) = x.matrix().topRows(2);
  const auto a = intra_block(partition(constant(g, x), 2), MaskKind::forward, params, attn_config(3));
  const auto b =
      intra_block(partition(constant(g, swapped), 2), MaskKind::forward, params, attn_config(3));
  EXPECT_EQ(a[0].value(), b[2].value());
  EXPECT_EQ(a[1].value(), b[1].value());
  EXPECT_EQ(a[2].value(), b[0].value());
}

TEST(IntraBlock, GradientThroughTwoBlocks) {
  auto store = mblosa_store(3, 6);
  store.add("x", random_tensor({4, 3}, 7), ParamRole::embedding);
  ModelLoss<double> f = [&](ParamBinder<double>& p) {
    const auto h = intra_block(partition(p("x"), 2), MaskKind::backward,
                               MaskedAttnParams<double>::bind(p, "m/intra"), attn_config(3));
    return sum(departition<double>(h, BlockPlan::make(4, 2)));
  };
  EXPECT_LT(finite_difference_check<double>(f, store, 1e-5).max_rel_error, 1e-4);
}

TEST(IntraBlock, PadContentIsIgnored) {
  const auto store = mblosa_store(3, 8);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MBlosaParams<double>::bind(p, "m");
  const auto x = constant(g, random_tensor({5, 3}, 9));
  const auto clean = partition(x, 3);
  auto dirty = clean;
  Tensor<double> garbage = dirty.blocks.back().value();
  garbage.matrix().bottomRows(1) = random_tensor({1, 3}, 10, -50, 50).matrix();
  dirty.blocks.back() = constant(g, garbage);
  for (MaskKind kind : {MaskKind::forward, MaskKind::backward, MaskKind::none}) {
    const auto h1 = intra_block(clean, kind, params.intra, attn_config(3));
    const auto h2 = intra_block(dirty, kind, params.intra, attn_config(3));
    EXPECT_LT(max_abs_diff(h1[0].value(), h2[0].value()), 1e-12);
    EXPECT_LT(max_abs_diff_rows(h1[1].value(), h2[1].value(), 0, 2), 1e-12);
    const auto e1 = inter_block<double>(h1, clean.valid, kind, params, attn_config(3));
    const auto e2 = inter_block<double>(h2, dirty.valid, kind, params, attn_config(3));
    EXPECT_LT(max_abs_diff(e1.value(), e2.value()), 1e-12) << mask_kind_name(kind);
  }
}

TEST(InterBlock, SingleBlockKeepsGatedSummary) {
  const auto store = mblosa_store(3, 11);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MBlosaParams<double>::bind(p, "m");
  const auto h = constant(g, random_tensor({4, 3}, 12));
  const std::vector<Var<double>> blocks{h};
  const std::vector<Validity> valid{Validity(4, true)};
  const auto e = inter_block<double>(blocks, valid, MaskKind::forward, params, attn_config(3));
  const auto v = source2token(h, params.summary);
  const auto gate = sigmoid(params.gate.b + matmul(v, params.gate.W2));
  ASSERT_EQ(e.shape(), (Shape{1, 3}));
  for (Index k = 0; k < 3; ++k) {
    EXPECT_NEAR(e.value()[k], (1.0 - gate.value()[k]) * v.value()[k], 1e-15);
  }
}

TEST(InterBlock, SaturatedGateSelectsAttentionOutput) {
  auto store = mblosa_store(3, 13);
  store.at("m/gate/b").fill(1e3);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MBlosaParams<double>::bind(p, "m");
  const auto part = partition(constant(g, random_tensor({8, 3}, 14)), 2);
  const auto h = intra_block(part, MaskKind::forward, params.intra, attn_config(3));
  std::vector<Var<double>> summaries;
  for (const auto& hb : h) summaries.push_back(reshape(source2token(hb, params.summary), {1, 3}));
  const auto v = concat<double>(summaries, 0);
  const auto o = masked_self_attention(v, Mask(4, MaskKind::forward), params.inter, attn_config(3));
  const auto e = inter_block<double>(h, part.valid, MaskKind::forward, params, attn_config(3));
  EXPECT_LT(max_abs_diff(e.value(), o.value()), 1e-12);
}

TEST(InterBlock, BlockLevelCausality) {
  const auto store = mblosa_store(3, 15);
  auto run = [&](const Tensor<double>& x) {
    Graph<double> g;
    ParamBinder<double> p(g, store);
    const auto params = MBlosaParams<double>::bind(p, "m");
    const auto part = partition(constant(g, x), 2);
    const auto h = intra_block(part, MaskKind::forward, params.intra, attn_config(3));
    return inter_block<double>(h, part.valid, MaskKind::forward, params, attn_config(3)).value();
  };
  const Tensor<double> x = random_tensor({8, 3}, 16);
  const auto base = run(x);
  for (Index l = 0; l < 3; ++l) {
    Tensor<double> y = x;
    for (Index t = 2 * (l + 1); t < 8; ++t) y.matrix().row(t).setConstant(3.0);
    EXPECT_LT(max_abs_diff_rows(base, run(y), 0, l + 1), 1e-12) << l;
  }
}

TEST(ContextFusion, ClosedGatePassesInputThrough) {
  auto store = mblosa_store(3, 17);
  store.at("m/fuse/b2").fill(-1e3);
  const Tensor<double> x = random_tensor({7, 3}, 18);
  EXPECT_LT(max_abs_diff(run_mblosa(store, x, MaskKind::forward, 3), x), 1e-12);
}

TEST(ContextFusion, TokensInOneBlockShareBlockContext) {
  const auto store = mblosa_store(3, 19);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto out = mblosa(constant(g, random_tensor({7, 3}, 20)), MaskKind::forward, 3,
                          MBlosaParams<double>::bind(p, "m"), attn_config(3));
  const auto plan = BlockPlan::make(7, 3);
  bool found = false;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const NodeId id{i};
    if (g.kind(id) != OpKind::embedding_lookup || g.value(id).dim(0) != 7) continue;
    found = true;
    const auto& E = g.value(id);
    for (Index t = 0; t < 7; ++t) {
      const Index first = plan.block_of(t) * plan.r;
      for (Index k = 0; k < 3; ++k) EXPECT_EQ(E(t, k), E(first, k));
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(out.shape(), (Shape{7, 3}));
}

TEST(Mblosa, PreservesShape) {
  const auto store = mblosa_store(4, 21);
  for (Index n : {1, 2, 3, 5, 8, 11}) {
    for (Index r : {1, 2, 3, 4, 12}) {
      EXPECT_EQ(run_mblosa(store, random_tensor({n, 4}, 22), MaskKind::backward, r).shape(),
                (Shape{n, 4}));
    }
  }
}

TEST(Mblosa, ForwardBlockCausality) {
  const auto store = mblosa_store(3, 23);
  const Tensor<double> x = random_tensor({10, 3}, 24);
  const Index r = 3;
  const auto base = run_mblosa(store, x, MaskKind::forward, r);
  for (Index b = 0; b < 3; ++b) {
    Tensor<double> y = x;
    for (Index t = (b + 1) * r; t < 10; ++t) y.matrix().row(t) = random_tensor({3}, 25 + t).matrix();
    EXPECT_LT(max_abs_diff_rows(base, run_mblosa(store, y, MaskKind::forward, r), 0, (b + 1) * r),
              1e-12);
  }
}

TEST(Mblosa, BackwardBlockCausality) {
  const auto store = mblosa_store(3, 26);
  const Tensor<double> x = random_tensor({9, 3}, 27);
  const Index r = 3;
  const auto base = run_mblosa(store, x, MaskKind::backward, r);
  for (Index b = 1; b < 3; ++b) {
    Tensor<double> y = x;
    for (Index t = 0; t < b * r; ++t) y.matrix().row(t).setConstant(-2.0);
    EXPECT_LT(max_abs_diff_rows(base, run_mblosa(store, y, MaskKind::backward, r), b * r, 9),
              1e-12);
  }
}

TEST(Mblosa, GradientEndToEnd) {
  auto store = mblosa_store(3, 28);
  store.add("x", random_tensor({5, 3}, 29), ParamRole::embedding);
  ModelLoss<double> f = [&](ParamBinder<double>& p) {
    Graph<double>& g = p.graph();
    const auto u =
        mblosa(p("x"), MaskKind::forward, 2, MBlosaParams<double>::bind(p, "m"), attn_config(3));
    return sum(u * constant(g, random_tensor({5, 3}, 30)));
  };
  EXPECT_LT(finite_difference_check<double>(f, store, 1e-5).max_rel_error, 1e-4);
}

TEST(Embed, IdentityTableSelectsRows) {
  Graph<double> g;
  const auto table = constant(g, Tensor<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const std::vector<Index> tokens{2, 0, 2};
  const auto x = embed<double>(tokens, table);
  EXPECT_EQ(x.value()(0, 2), 1.0);
  EXPECT_EQ(x.value()(1, 0), 1.0);
  EXPECT_EQ(x.value().matrix().row(0), x.value().matrix().row(2));
  const std::vector<Index> oov{3};
  EXPECT_THROW(embed<double>(oov, table), ShapeError);
}

TEST(Encoder, OutputLengthIsTwiceHidden) {
  const auto cfg = small_encoder(0);
  const auto store = encoder_store(cfg, 31);
  for (Index n : {1, 2, 7, 12, 30}) {
    Graph<double> g;
    ParamBinder<double> p(g, store);
    std::vector<Index> tokens(static_cast<std::size_t>(n));
    for (Index t = 0; t < n; ++t) tokens[static_cast<std::size_t>(t)] = t % cfg.vocab;
    EXPECT_EQ(biblosan_encode<double>(tokens, p, cfg).shape(), (Shape{2 * cfg.d_h}));
  }
}

TEST(Encoder, MirrorSymmetry) {
  // Reversing tokens and exchanging fw/bw parameters swaps the two halves of
  // u_bi and reverses its rows; permuting the final source2token's features
  // the same way swaps the halves of s.
  const auto cfg = small_encoder(3);
  const auto store = encoder_store(cfg, 32);
  const Index d = cfg.d_h;
  ParamStore<double> mirrored;
  for (const auto& e : store.entries()) {
    std::string path = e.path;
    if (path.starts_with("fw/")) path.replace(0, 2, "bw");
    else if (path.starts_with("bw/")) path.replace(0, 2, "fw");
    mirrored.add(path, e.value, e.role);
  }
  // Reorder after all renames so both stores share the same entry order.
  ParamStore<double> swapped;
  for (const auto& e : store.entries()) swapped.add(e.path, mirrored.at(e.path), e.role);
  auto swap_halves_rows = [d](Tensor<double>& t) {
    RowMatrix<double> m = t.matrix();
    t.matrix().topRows(d) = m.bottomRows(d);
    t.matrix().bottomRows(d) = m.topRows(d);
  };
  auto swap_halves_cols = [d](Tensor<double>& t) {
    const Tensor<double> src = t;
    const Index rows = t.rank() == 1 ? 1 : t.dim(0);
    Tensor<double> out = t.reshaped({rows, 2 * d});
    const Tensor<double> in = src.reshaped({rows, 2 * d});
    out.matrix().leftCols(d) = in.matrix().rightCols(d);
    out.matrix().rightCols(d) = in.matrix().leftCols(d);
    t = out.reshaped(src.shape());
  };
  swap_halves_rows(swapped.at("s2t/W1"));
  swap_halves_cols(swapped.at("s2t/W"));
  swap_halves_cols(swapped.at("s2t/b"));

  const std::vector<Index> tokens{3, 1, 4, 1, 5, 9, 2, 6, 5};
  std::vector<Index> reversed(tokens.rbegin(), tokens.rend());
  Graph<double> g;
  ParamBinder<double> p1(g, store);
  ParamBinder<double> p2(g, swapped);
  const auto s1 = biblosan_encode<double>(tokens, p1, cfg);
  const auto s2 = biblosan_encode<double>(reversed, p2, cfg);
  for (Index k = 0; k < d; ++k) {
    EXPECT_NEAR(s1.value()[k], s2.value()[k + d], 1e-10);
    EXPECT_NEAR(s1.value()[k + d], s2.value()[k], 1e-10);
  }
}

TEST(Encoder, OrderSensitive) {
  const auto cfg = small_encoder(2);
  const auto store = encoder_store(cfg, 33);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const std::vector<Index> a{0, 5, 6, 1, 7, 8};
  const std::vector<Index> b{1, 5, 6, 0, 7, 8};
  const auto sa = biblosan_encode<double>(a, p, cfg);
  const auto sb = biblosan_encode<double>(b, p, cfg);
  EXPECT_GT(max_abs_diff(sa.value(), sb.value()), 1e-6);
}

TEST(Encoder, UnmaskedVariantIgnoresOrderWithinSingleBlock) {
  auto cfg = small_encoder(8);
  cfg.arch = EncoderArch::unmasked;
  const auto store = encoder_store(cfg, 34);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const std::vector<Index> a{0, 5, 6, 1, 7, 8};
  const std::vector<Index> b{1, 5, 6, 0, 7, 8};
  const auto sa = biblosan_encode<double>(a, p, cfg);
  const auto sb = biblosan_encode<double>(b, p, cfg);
  EXPECT_LT(max_abs_diff(sa.value(), sb.value()), 1e-12);
}

TEST(Encoder, GradientOfFullEncoder) {
  const auto cfg = small_encoder(2);
  auto store = encoder_store(cfg, 35);
  const std::vector<Index> tokens{1, 4, 2, 8, 5, 7, 0, 3, 9, 6, 2, 5};
  ModelLoss<double> f = [&](ParamBinder<double>& p) {
    Graph<double>& g = p.graph();
    const auto s = biblosan_encode<double>(tokens, p, cfg);
    return sum(s * constant(g, random_tensor({2 * cfg.d_h}, 36)));
  };
  const auto r = finite_difference_check<double>(f, store, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic "
                                   << r.analytic << " numeric " << r.numeric;
}

TEST(Encoder, GradientOfFullEncoderAtCoarserStep) {
  // Same check with a step that balances truncation against float64 roundoff;
  // smallest-magnitude coordinates (~1e-8) are limited by roundoff at 1e-5.
  const auto cfg = small_encoder(2);
  auto store = encoder_store(cfg, 35);
  const std::vector<Index> tokens{1, 4, 2, 8, 5, 7, 0, 3, 9, 6, 2, 5};
  ModelLoss<double> f = [&](ParamBinder<double>& p) {
    Graph<double>& g = p.graph();
    const auto s = biblosan_encode<double>(tokens, p, cfg);
    return sum(s * constant(g, random_tensor({2 * cfg.d_h}, 36)));
  };
  EXPECT_LT(finite_difference_check<double>(f, store, 3e-4).max_rel_error, 1e-4);
}

TEST(EncoderConfig, MapRoundTrip) {
  EncoderConfig cfg = small_encoder(0);
  cfg.len_mu = 24.5;
  cfg.len_sigma = 6.25;
  cfg.keep_prob = 0.8;
  cfg.arch = EncoderArch::unmasked;
  cfg.activation = Activation::elu;
  const auto back = EncoderConfig::from_map(cfg.to_map());
  EXPECT_EQ(back.to_map(), cfg.to_map());
}

TEST(EncoderConfig, RejectsInvalidValues) {
  EncoderConfig cfg;
  cfg.keep_prob = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.keep_prob = 1.0;
  cfg.d_h = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(EncoderConfig, AutoBlockLength) {
  EncoderConfig cfg;
  EXPECT_EQ(cfg.resolve_block_length(100), 6);
  cfg.len_mu = 20;
  cfg.len_sigma = 10;
  cfg.batch = 64;
  EXPECT_EQ(cfg.resolve_block_length(7), 5);
  cfg.block_len = 3;
  EXPECT_EQ(cfg.resolve_block_length(100), 3);
}
