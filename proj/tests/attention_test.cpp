#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "blosa/attention.hpp"
#include "blosa/gradcheck.hpp"
#include "test_util.hpp"

using namespace blosa;
using blosa::testing::max_abs_diff;
using blosa::testing::max_abs_diff_rows;
using blosa::testing::random_tensor;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

AttnConfig attn_config(Index d) {
  AttnConfig cfg;
  cfg.d_e = d;
  cfg.d_h = d;
  return cfg;
}

Tensor<double> masked_output(const ParamStore<double>& store, const Tensor<double>& x,
                             MaskKind kind, const Validity& valid = {}) {
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MaskedAttnParams<double>::bind(p, "m");
  return masked_self_attention(constant(g, x), Mask(x.dim(0), kind), params, attn_config(x.dim(1)),
                               valid)
      .value();
}

ParamStore<double> masked_store(Index d, std::uint64_t seed) {
  ParamStore<double> store;
  Rng rng(seed);
  init_masked_attention(store, "m", d, rng);
  store.at("m/b1") = random_tensor({d}, seed + 1, -0.5, 0.5);
  return store;
}

}  // namespace

TEST(Mask, ForwardMatchesStrictUpperTriangle) {
  const Mask m = build_mask(3, MaskKind::forward);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(m.entry(i, j), i < j ? 0.0 : -kInf) << i << "," << j;
  }
}

TEST(Mask, BackwardIsTransposeOfForward) {
  const Mask fw = build_mask(3, MaskKind::forward);
  const Mask bw = build_mask(3, MaskKind::backward);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      EXPECT_EQ(bw.entry(i, j), fw.entry(j, i));
      EXPECT_FALSE(fw.allows(i, j) && bw.allows(i, j));
    }
  }
}

TEST(Mask, NoneIsAllZeros) {
  const Mask m = build_mask(4, MaskKind::none);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(m.entry(i, j), 0.0);
  }
}

TEST(Mask, RejectsEmptyLength) {
  EXPECT_THROW(build_mask(0, MaskKind::forward), std::invalid_argument);
}

TEST(Mask, BiasIsQueryMajor) {
  const auto b = Mask(3, MaskKind::forward).bias<double>();
  // Row j is the query; column i the attended token.
  EXPECT_EQ(b(2, 0), 0.0);
  EXPECT_EQ(b(0, 2), -kInf);
  EXPECT_EQ(b(1, 1), -kInf);
}

TEST(Additive, ZeroParamsGiveBias) {
  ParamStore<double> store;
  store.add("a/W1", Tensor<double>({3, 4}), ParamRole::weight);
  store.add("a/W2", Tensor<double>({2, 4}), ParamRole::weight);
  store.add("a/b1", Tensor<double>({4}), ParamRole::bias);
  store.add("a/w", Tensor<double>({4, 1}), ParamRole::weight);
  store.add("a/b", Tensor<double>::scalar(0.7), ParamRole::bias);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto s = additive_compat(constant(g, random_tensor({5, 3}, 1)),
                                 constant(g, random_tensor({2}, 2)),
                                 AdditiveParams<double>::bind(p, "a"));
  ASSERT_EQ(s.shape(), (Shape{5}));
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(s.value()[i], 0.7);
}

TEST(Additive, ZeroInputWeightGivesMeanOfTokens) {
  ParamStore<double> store;
  Rng rng(3);
  init_additive(store, "a", 3, 2, 4, false, rng);
  store.at("a/W1").fill(0.0);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const Tensor<double> x = random_tensor({4, 3}, 4);
  const auto s = vanilla_attention(constant(g, x), constant(g, random_tensor({2}, 5)),
                                   AdditiveParams<double>::bind(p, "a"));
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(s.value()[k], x.matrix().col(k).mean(), 1e-15);
}

TEST(Additive, GradientMatchesFiniteDifferences) {
  for (bool multi : {false, true}) {
    ParamStore<double> store;
    Rng rng(8);
    init_additive(store, "a", 3, 2, 4, multi, rng);
    store.at("a/b1") = random_tensor({4}, 9, -0.5, 0.5);
    const Tensor<double> x = random_tensor({5, 3}, 10);
    const Tensor<double> q = random_tensor({2}, 11);
    ModelLoss<double> f = [&](ParamBinder<double>& p) {
      Graph<double>& g = p.graph();
      const auto scores = additive_compat(constant(g, x), constant(g, q),
                                          AdditiveParams<double>::bind(p, "a"));
      return sum(scores * constant(g, random_tensor(scores.shape(), 12)));
    };
    EXPECT_LT(finite_difference_check<double>(f, store, 1e-5).max_rel_error, 1e-6) << multi;
  }
}

TEST(Multiplicative, IdentityProjections) {
  ParamStore<double> store;
  store.add("m/W1", Tensor<double>({2, 2}, {1, 0, 0, 1}), ParamRole::weight);
  store.add("m/W2", Tensor<double>({2, 2}, {1, 0, 0, 1}), ParamRole::weight);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MultiplicativeParams<double>::bind(p, "m");
  const auto q = constant(g, Tensor<double>::vector({1, 1}));
  const auto same = multiplicative_compat(constant(g, Tensor<double>::vector({1, 1})), q, params);
  const auto ortho = multiplicative_compat(constant(g, Tensor<double>::vector({1, -1})), q, params);
  EXPECT_EQ(same.value()[0], 2.0);
  EXPECT_EQ(ortho.value()[0], 0.0);
}

TEST(Multiplicative, LinearInTokens) {
  ParamStore<double> store;
  Rng rng(4);
  init_multiplicative(store, "m", 3, 2, 5, rng);
  Graph<double> g;
  ParamBinder<double> p(g, store);
  const auto params = MultiplicativeParams<double>::bind(p, "m");
  const Tensor<double> x = random_tensor({4, 3}, 5);
  Tensor<double> x3 = x;
  x3.array() *= 3.0;
  const auto q = constant(g, random_tensor({2}, 6));
  const auto a = multiplicative_compat(constant(g, x), q, params);
  const auto b = multiplicative_compat(constant(g, x3), q, params);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(b.value()[i], 3.0 * a.value()[i], 1e-12);
}

TEST(Attend, ScoresLog3AndZero) {
  Graph<double> g;
  const auto x = constant(g, Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const auto s = attend(x, constant(g, Tensor<double>::vector({std::log(3.0), 0.0})));
  EXPECT_NEAR(s.value()[0], 0.75, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.25, 1e-15);
}

TEST(Attend, OutputInConvexHull) {
  Graph<double> g;
  const Tensor<double> x = random_tensor({6, 4}, 7);
  const auto s = attend(constant(g, x), constant(g, random_tensor({6}, 8, -3, 3)));
  for (Index k = 0; k < 4; ++k) {
    EXPECT_GE(s.value()[k], x.matrix().col(k).minCoeff());
    EXPECT_LE(s.value()[k], x.matrix().col(k).maxCoeff());
  }
}

TEST(Attend, RejectsEmptySequence) {
  Graph<double> g;
  EXPECT_THROW(attend(constant(g, Tensor<double>({0, 2})), constant(g, Tensor<double>({0}))),
               ShapeError);
}

TEST(AttendFeatures, ConstantScoresGiveFeatureMeans) {
  Graph<double> g;
  const Tensor<double> x = random_tensor({5, 3}, 9);
  const auto s = attend_features(constant(g, x), constant(g, Tensor<double>({5, 3}, 0.4)));
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(s.value()[k], x.matrix().col(k).mean(), 1e-15);
}

TEST(AttendFeatures, OneHotPicksToken) {
  Graph<double> g;
  const Tensor<double> x = random_tensor({4, 3}, 10);
  Tensor<double> scores({4, 3}, -kInf);
  for (Index k = 0; k < 3; ++k) scores(2, k) = 0.0;
  const auto s = attend_features(constant(g, x), constant(g, scores));
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(s.value()[k], x(2, k));
}

TEST(AttendFeatures, FeatureRowsSumToOne) {
  // With all-ones tokens the output is the per-feature probability mass.
  Graph<double> g;
  const auto s = attend_features(constant(g, Tensor<double>({6, 4}, 1.0)),
                                 constant(g, random_tensor({6, 4}, 11, -5, 5)));
  for (Index k = 0; k < 4; ++k) EXPECT_NEAR(s.value()[k], 1.0, 1e-12);
}

class Source2TokenTest : public ::testing::Test {
protected:
  void SetUp() override {
    Rng rng(12);
    init_source2token(store, "s", 3, 5, rng);
    store.at("s/b1") = random_tensor({5}, 13, -0.5, 0.5);
  }
  Tensor<double> run(const Tensor<double>& x, const Validity& valid = {}) {
    Graph<double> g;
    ParamBinder<double> p(g, store);
    return source2token(constant(g, x), Source2TokenParams<double>::bind(p, "s"),
                        Activation::relu, valid)
        .value();
  }
  ParamStore<double> store;
};

TEST_F(Source2TokenTest, SingleTokenIsReturned) {
  const Tensor<double> x = random_tensor({1, 3}, 14);
  const auto s = run(x);
  for (Index k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(s[k], x[k]);
}

TEST_F(Source2TokenTest, DuplicateTokenChangesNothing) {
  const Tensor<double> x = random_tensor({1, 3}, 15);
  Tensor<double> xx({2, 3});
  for (Index k = 0; k < 3; ++k) xx(0, k) = xx(1, k) = x[k];
  EXPECT_LT(max_abs_diff(run(x).reshaped({3}), run(xx)), 1e-15);
}

TEST_F(Source2TokenTest, InvalidPaddingIgnored) {
  const Tensor<double> x = random_tensor({4, 3}, 16);
  Tensor<double> padded({6, 3});
  padded.matrix().topRows(4) = x.matrix();
  padded.matrix().bottomRows(2) = random_tensor({2, 3}, 17).matrix();
  EXPECT_LT(max_abs_diff(run(x), run(padded, {true, true, true, true, false, false})), 1e-12);
}

TEST_F(Source2TokenTest, AllInvalidThrows) {
  EXPECT_THROW(run(random_tensor({2, 3}, 18), {false, false}), std::invalid_argument);
}

class Token2TokenTest : public ::testing::Test {
protected:
  void SetUp() override {
    Rng rng(19);
    init_token2token(store, "t", 3, 4, rng);
    store.at("t/b1") = random_tensor({4}, 20, -0.5, 0.5);
  }
  Tensor<double> run(const Tensor<double>& x) {
    Graph<double> g;
    ParamBinder<double> p(g, store);
    return token2token(constant(g, x), Token2TokenParams<double>::bind(p, "t")).value();
  }
  ParamStore<double> store;
};

TEST_F(Token2TokenTest, SingleTokenIsReturned) {
  const Tensor<double> x = random_tensor({1, 3}, 21);
  EXPECT_LT(max_abs_diff(run(x), x), 1e-15);
}

TEST_F(Token2TokenTest, PermutationEquivariant) {
  const Tensor<double> x = random_tensor({3, 3}, 22);
  Tensor<double> swapped = x;
  swapped.matrix().row(0) = x.matrix().row(2);
  swapped.matrix().row(2) = x.matrix().row(0);
  const auto a = run(x);
  const auto b = run(swapped);
  for (Index k = 0; k < 3; ++k) {
    EXPECT_NEAR(a(0, k), b(2, k), 1e-12);
    EXPECT_NEAR(a(1, k), b(1, k), 1e-12);
    EXPECT_NEAR(a(2, k), b(0, k), 1e-12);
  }
}

TEST_F(Token2TokenTest, GradientMatchesFiniteDifferences) {
  const Tensor<double> x = random_tensor({4, 3}, 23);
  ModelLoss<double> f = [&](ParamBinder<double>& p) {
    Graph<double>& g = p.graph();
    const auto s = token2token(constant(g, x), Token2TokenParams<double>::bind(p, "t"));
    return sum(s * constant(g, random_tensor({4, 3}, 24)));
  };
  EXPECT_LT(finite_difference_check<double>(f, store, 1e-5).max_rel_error, 1e-4);
}

TEST(MaskedSelfAttention, SingleTokenForwardIsZero) {
  const auto store = masked_store(3, 25);
  const auto out = masked_output(store, random_tensor({1, 3}, 26), MaskKind::forward);
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(out[k], 0.0);
}

TEST(MaskedSelfAttention, FirstTokenUnderForwardMaskIsZero) {
  const auto store = masked_store(3, 27);
  const auto out = masked_output(store, random_tensor({5, 3}, 28), MaskKind::forward);
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(out(0, k), 0.0);
}

TEST(MaskedSelfAttention, ForwardMaskIsCausal) {
  const auto store = masked_store(4, 29);
  const Tensor<double> x = random_tensor({7, 4}, 30);
  const auto base = masked_output(store, x, MaskKind::forward);
  for (Index j = 0; j < 6; ++j) {
    Tensor<double> y = x;
    for (Index i = j + 1; i < 7; ++i) y.matrix().row(i) = random_tensor({4}, 31 + i).matrix();
    EXPECT_LT(max_abs_diff_rows(base, masked_output(store, y, MaskKind::forward), 0, j + 1),
              1e-12);
  }
}

TEST(MaskedSelfAttention, BackwardMaskIsAntiCausal) {
  const auto store = masked_store(4, 32);
  const Tensor<double> x = random_tensor({7, 4}, 33);
  const auto base = masked_output(store, x, MaskKind::backward);
  for (Index j = 1; j < 7; ++j) {
    Tensor<double> y = x;
    for (Index i = 0; i < j; ++i) y.matrix().row(i).setConstant(5.0);
    EXPECT_LT(max_abs_diff_rows(base, masked_output(store, y, MaskKind::backward), j, 7), 1e-12);
  }
}

TEST(MaskedSelfAttention, DirectionsDiffer) {
  const auto store = masked_store(4, 34);
  const Tensor<double> x = random_tensor({6, 4}, 35);
  EXPECT_GT(max_abs_diff(masked_output(store, x, MaskKind::forward),
                         masked_output(store, x, MaskKind::backward)),
            1e-6);
}

TEST(MaskedSelfAttention, ForwardMaskBreaksPermutationEquivariance) {
  const auto store = masked_store(3, 36);
  const Tensor<double> x = random_tensor({3, 3}, 37);
  Tensor<double> swapped = x;
  swapped.matrix().row(0) = x.matrix().row(2);
  swapped.matrix().row(2) = x.matrix().row(0);
  const auto a = masked_output(store, x, MaskKind::forward);
  const auto b = masked_output(store, swapped, MaskKind::forward);
  double diff = 0.0;
  for (Index k = 0; k < 3; ++k) diff = std::max(diff, std::abs(a(0, k) - b(2, k)));
  EXPECT_GT(diff, 1e-6);
}

TEST(MaskedSelfAttention, NoneMaskWithValidityMatchesShorterSequence) {
  const auto store = masked_store(3, 38);
  const Tensor<double> x = random_tensor({4, 3}, 39);
  Tensor<double> padded({6, 3});
  padded.matrix().topRows(4) = x.matrix();
  const auto a = masked_output(store, x, MaskKind::forward);
  const auto b = masked_output(store, padded, MaskKind::forward, {true, true, true, true, false, false});
  EXPECT_LT(max_abs_diff_rows(a, b, 0, 4), 1e-12);
}

TEST(MaskedSelfAttention, ScoresBoundedByC) {
  // Huge weights saturate tanh; outputs stay finite convex combinations.
  auto store = masked_store(3, 40);
  store.at("m/W1").array() *= 1e6;
  store.at("m/W2").array() *= 1e6;
  const Tensor<double> x = random_tensor({5, 3}, 41);
  const auto out = masked_output(store, x, MaskKind::none);
  for (Index j = 0; j < 5; ++j) {
    for (Index k = 0; k < 3; ++k) {
      ASSERT_TRUE(std::isfinite(out(j, k)));
      EXPECT_GE(out(j, k), x.matrix().col(k).minCoeff() - 1e-12);
      EXPECT_LE(out(j, k), x.matrix().col(k).maxCoeff() + 1e-12);
    }
  }
}

TEST(MaskedSelfAttention, GradientMatchesFiniteDifferences) {
  auto store = masked_store(3, 42);
  const Tensor<double> x0 = random_tensor({5, 3}, 43);
  store.add("x", x0, ParamRole::embedding);
  for (MaskKind kind : {MaskKind::forward, MaskKind::backward, MaskKind::none}) {
    ModelLoss<double> f = [&](ParamBinder<double>& p) {
      const auto out = masked_self_attention(p("x"), Mask(5, kind),
                                             MaskedAttnParams<double>::bind(p, "m"), attn_config(3));
      return sum(out);
    };
    EXPECT_LT(finite_difference_check<double>(f, store, 1e-5).max_rel_error, 1e-4)
        << mask_kind_name(kind);
  }
}
