#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "curio/encoder.hpp"
#include "curio/hash.hpp"
#include "support/gradient_cases.hpp"

using namespace curio;

namespace {

// Goldens below come from tests/oracles/featurize_oracle.py.

FeaturizerConfig small_features(std::size_t dim) {
  FeaturizerConfig c;
  c.dim = dim;
  return c;
}

ScorerParams toy_scorer() {
  EncoderConfig c;
  c.features = small_features(8);
  c.hidden = 2;
  c.hidden_layers = 1;
  c.repr_dim = 2;
  auto p = init_scorer(c, {1, 2, 3}, 42);
  for (auto* t : p.tensors()) std::fill(t->data.begin(), t->data.end(), 0.1);
  p.logit_bias.data[0] = 0.0;
  return p;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.features = small_features(64);
  c.hidden = 8;
  c.hidden_layers = 1;
  c.repr_dim = 4;
  return c;
}

}  // namespace

TEST(Hash, Fnv1aGoldens) {
  EXPECT_EQ(fnv1a64(""), 14695981039346656037ULL);
  EXPECT_EQ(fnv1a64("a"), 12638187200555641996ULL);
  EXPECT_EQ(fnv1a64("abc", 7), 15907673864879486022ULL);
}

TEST(Featurize, EmptyTextIsZeroVector) {
  const auto fv = featurize("", small_features(32));
  EXPECT_EQ(fv.dim, 32u);
  EXPECT_TRUE(fv.empty());
  EXPECT_EQ(fv.dense(), std::vector<double>(32, 0.0));
}

TEST(Featurize, AbcBucketGolden) {
  const auto fv = featurize("abc", small_features(8));
  ASSERT_EQ(fv.index, std::vector<std::uint32_t>{3});
  EXPECT_DOUBLE_EQ(fv.value[0], 1.0);
}

TEST(Featurize, HelloBucketGolden) {
  const auto fv = featurize("hello", small_features(8));
  ASSERT_EQ(fv.index, (std::vector<std::uint32_t>{0, 3, 5, 6}));
  EXPECT_NEAR(fv.value[0], 0.2886751345948129, 1e-15);
  EXPECT_NEAR(fv.value[1], 0.2886751345948129, 1e-15);
  EXPECT_NEAR(fv.value[2], 0.2886751345948129, 1e-15);
  EXPECT_NEAR(fv.value[3], 0.8660254037844387, 1e-15);
}

TEST(Featurize, ShortTextIsOneLowercasedGram) {
  const auto fv = featurize("Ab", small_features(16));
  ASSERT_EQ(fv.index, std::vector<std::uint32_t>{10});
  EXPECT_EQ(fv, featurize("ab", small_features(16)));
}

TEST(Featurize, UnitNormAndDeterministic) {
  const auto cfg = small_features(4096);
  const std::string text = "The lighthouse keeper counted waves — and forgot the ships.";
  const auto a = featurize(text, cfg);
  EXPECT_NEAR(a.norm(), 1.0, 1e-12);
  EXPECT_EQ(a, featurize(text, cfg));
}

TEST(Featurize, TruncatesToMaxChars) {
  auto cfg = small_features(512);
  cfg.max_chars = 10;
  EXPECT_EQ(featurize("abcdefghij", cfg), featurize("abcdefghijKLMNOPQRST", cfg));
  EXPECT_NE(featurize("abcdefghij", cfg), featurize("abcdefghiz", cfg));
}

TEST(Featurize, MultibyteCharactersCountAsOne) {
  // Three code points, six bytes: exactly one trigram.
  const auto fv = featurize("\xC3\xA9\xC3\xA9\xC3\xA9", small_features(1024));
  EXPECT_EQ(fv.index.size(), 1u);
  EXPECT_EQ(fv.index[0], ngram_bucket("\xC3\xA9\xC3\xA9\xC3\xA9", small_features(1024)));
}

TEST(Scorer, ToyForwardStateAGolden) {
  const auto p = toy_scorer();
  const auto fc = p.config.features;
  const auto out = to_output(forward_state_a(p, featurize("a", fc), featurize("b", fc), 1));
  EXPECT_NEAR(out.representation[0], 0.034169884176818245, 1e-15);
  EXPECT_NEAR(out.representation[1], 0.034169884176818245, 1e-15);
  EXPECT_NEAR(out.logit, 0.0068339768353636492, 1e-15);
}

TEST(Scorer, ToyForwardStateBGolden) {
  const auto p = toy_scorer();
  const auto fc = p.config.features;
  const auto out = to_output(forward_state_b(p, featurize("a", fc), featurize("b", fc), featurize("good", fc)));
  EXPECT_NEAR(out.representation[0], 0.037193523475398171, 1e-15);
  EXPECT_NEAR(out.logit, 0.0074387046950796345, 1e-15);
}

TEST(Scorer, LogitIsLinearInRepresentation) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 7);
  const Story s{"s1", "A clock that runs on regret."};
  const auto out = score_state_a(p, s, Dimension::OriginalityInForm, 2);
  double expect = p.logit_bias.data[0];
  for (std::size_t j = 0; j < out.representation.size(); ++j) expect += p.logit_weight.data[j] * out.representation[j];
  EXPECT_EQ(out.logit, expect);
}

TEST(Scorer, PureAcrossCalls) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 7);
  const Story s{"s1", "Snow falling upward."};
  const auto a = score_state_a(p, s, Dimension::OriginalityInThought, 1);
  const auto b = score_state_a(p, s, Dimension::OriginalityInThought, 1);
  EXPECT_EQ(a.representation, b.representation);
  EXPECT_EQ(a.logit, b.logit);
}

TEST(Scorer, ZeroLogitHeadGivesZeroLogit) {
  auto p = init_scorer(small_encoder(), {1, 2, 3}, 7);
  p.logit_weight.zero();
  p.logit_bias.zero();
  const Story s{"s1", "Anything at all."};
  EXPECT_EQ(score_state_a(p, s, Dimension::StructuralFlexibility, 3).logit, 0.0);
  EXPECT_EQ(score_state_b(p, s, Dimension::StructuralFlexibility, "why not").logit, 0.0);
}

TEST(Scorer, EmptyExplanationIsZeroConditioning) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 7);
  const auto fc = p.config.features;
  const auto story = featurize("A map of a city that moves.", fc);
  const auto q = featurize(question_text(Dimension::OriginalityInForm), fc);
  const auto b = forward_state_b(p, story, q, featurize("", fc));
  const auto none = forward_unconditioned(p, story, q);
  const auto a = forward_state_a(p, story, q, 1);
  EXPECT_EQ(b.logit, none.logit);
  EXPECT_NE(b.logit, a.logit);
}

TEST(Scorer, UnknownExpertThrows) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 7);
  const Story s{"s1", "text"};
  try {
    score_state_a(p, s, Dimension::OriginalityInThought, 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownExpert);
  }
}

TEST(Backprop, LogitLossGivesUnitBiasGradient) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 3);
  const auto fc = p.config.features;
  const auto trace = forward_state_a(p, featurize("story", fc), featurize("question", fc), 1);
  auto g = zeros_like(p);
  scorer_backward(p, trace, {}, 1.0, g);
  EXPECT_EQ(g.logit_bias.data[0], 1.0);
  EXPECT_EQ(g.logit_weight.data, trace.trunk.representation);
}

TEST(Backprop, ConstantLossGivesZeroGradients) {
  const auto p = init_scorer(small_encoder(), {1, 2, 3}, 3);
  const auto fc = p.config.features;
  const auto trace = forward_state_b(p, featurize("story", fc), featurize("question", fc), featurize("e", fc));
  auto g = zeros_like(p);
  scorer_backward(p, trace, std::vector<double>(p.config.repr_dim, 0.0), 0.0, g);
  for (const auto* t : g.tensors()) {
    for (double v : t->data) ASSERT_EQ(v, 0.0) << t->name;
  }
}

TEST(Backprop, NonFiniteGradientIsReported) {
  auto g = zeros_like(init_scorer(small_encoder(), {1, 2, 3}, 3));
  g.logit_weight.data[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    check_finite_gradients(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
  }
}

TEST(Backprop, MatchesFiniteDifferencesOnRandomConfigurations) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = gradient_cases::encoder_case(seed);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_relative_error, 1e-3) << "seed " << seed << ": " << r.worst;
  }
}

TEST(Adapters, FreshAdaptersLeaveOutputsUnchanged) {
  const auto base = init_scorer(small_encoder(), {1, 2, 3}, 5);
  auto adapted = base;
  apply_low_rank_adapters(adapted, 4, 32.0, 0.1, 9);
  const Story s{"s1", "The orchard kept a diary."};
  const auto a = score_state_a(base, s, Dimension::OriginalityInThought, 2);
  const auto b = score_state_a(adapted, s, Dimension::OriginalityInThought, 2);
  EXPECT_EQ(a.representation, b.representation);
  EXPECT_EQ(a.logit, b.logit);
}

TEST(Adapters, FreezeBaseAndStoreScale) {
  auto p = init_scorer(small_encoder(), {1, 2, 3}, 5);
  apply_low_rank_adapters(p, 2, 32.0, 0.1, 9);
  EXPECT_FALSE(p.trunk.input_projection.trainable);
  EXPECT_FALSE(p.trunk.representation_head.trainable);
  EXPECT_FALSE(p.expert_embedding.trainable);
  EXPECT_FALSE(p.logit_weight.trainable);
  ASSERT_TRUE(p.trunk.adapters[0].has_value());
  EXPECT_DOUBLE_EQ(p.trunk.adapters[0]->scale, 16.0);
  EXPECT_TRUE(p.trunk.adapters[0]->a.trainable);
  for (double v : p.trunk.adapters[0]->a.data) EXPECT_EQ(v, 0.0);
}

TEST(Adapters, RankTooLargeIsRejected) {
  auto p = init_scorer(small_encoder(), {1, 2, 3}, 5);
  try {
    apply_low_rank_adapters(p, 5, 32.0, 0.1, 9);  // repr_dim is 4
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankTooLarge);
  }
}

TEST(Adapters, EffectiveDeltaHasRankAtMostR) {
  EncoderConfig c;
  c.features = small_features(8);
  c.hidden = 8;
  c.hidden_layers = 1;
  c.repr_dim = 8;
  auto p = init_scorer(c, {1, 2, 3}, 5);
  const auto base = p.trunk.hidden_weights[0];
  apply_low_rank_adapters(p, 3, 32.0, 0.0, 9);
  Rng rng(1);
  for (auto& v : p.trunk.adapters[1]->a.data) v = rng.uniform(-1, 1);
  const auto w = effective_weight(p.trunk, 1);
  Eigen::MatrixXd delta(8, 8);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) delta(i, j) = w.at(i, j) - base.at(i, j);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta);
  svd.setThreshold(1e-10);
  EXPECT_EQ(svd.rank(), 3);
}

TEST(Checkpoint, TensorsRoundTripThroughJson) {
  auto p = init_scorer(small_encoder(), {1, 2, 3}, 5);
  apply_low_rank_adapters(p, 2, 32.0, 0.1, 9);
  const auto j = tensors_to_json(std::as_const(p).tensors());
  auto q = init_scorer(small_encoder(), {1, 2, 3}, 6);
  restore_trunk_layout(q.trunk, trunk_layout_to_json(p.trunk));
  tensors_from_json(j, q.tensors());
  const auto pt = std::as_const(p).tensors();
  const auto qt = std::as_const(q).tensors();
  ASSERT_EQ(pt.size(), qt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) EXPECT_EQ(pt[i]->data, qt[i]->data) << pt[i]->name;
}

TEST(CorpusFeatures, CachesPerExampleFeatures) {
  const Corpus corpus({{"s1", "one story"}},
                      {{0, Dimension::OriginalityInForm, {1, "because", Verdict::Yes}},
                       {0, Dimension::OriginalityInForm, {2, "although", Verdict::No}},
                       {0, Dimension::OriginalityInForm, {3, "still", Verdict::No}}});
  const auto fc = small_features(128);
  const CorpusFeatures f(corpus, fc);
  EXPECT_EQ(f.story(1), featurize("one story", fc));
  EXPECT_EQ(f.question(2), featurize(question_text(Dimension::OriginalityInForm), fc));
  EXPECT_EQ(f.explanation(1), featurize("although", fc));
}
