#include <cmath>

#include <gtest/gtest.h>

#include "curio/icm.hpp"
#include "curio/synth.hpp"
#include "support/gradient_cases.hpp"

using namespace curio;

namespace {

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::Io;
}

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.features.dim = 512;
  c.hidden = 16;
  c.repr_dim = 8;
  return c;
}

ICMConfig quick_config() {
  ICMConfig c;
  c.prior_epochs = 2;
  c.optimizer.epochs = 2;
  c.adapters.rank = 4;
  return c;
}

SyntheticCorpus small_corpus(std::size_t stories = 8) {
  auto spec = default_synthetic_spec();
  spec.n_stories = stories;
  return generate_corpus(spec);
}

std::vector<std::size_t> all_indices(const Corpus& c) {
  std::vector<std::size_t> out(c.examples().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

}  // namespace

TEST(ForwardLoss, IdenticalVectorsGiveZero) {
  const std::vector<double> h{0.3, -1.2, 2.0};
  EXPECT_NEAR(forward_loss(h, h), 0.0, 1e-15);
}

TEST(ForwardLoss, CosineExtremes) {
  EXPECT_NEAR(forward_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0, 1e-15);
  EXPECT_NEAR(forward_loss(std::vector<double>{1, -2}, std::vector<double>{-1, 2}), 2.0, 1e-15);
}

TEST(ForwardLoss, HandComputedValue) {
  EXPECT_NEAR(forward_loss(std::vector<double>{1, 2}, std::vector<double>{2, 1}), 0.2, 1e-12);
}

TEST(ForwardLoss, ScaleInvariantAndBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    const double l = forward_loss(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    auto a2 = a;
    for (auto& v : a2) v *= 7.5;
    EXPECT_NEAR(forward_loss(a2, b), l, 1e-9);
  }
}

TEST(ForwardLoss, DegenerateNormThrows) {
  const std::vector<double> zero{0, 0};
  const std::vector<double> one{1, 0};
  EXPECT_EQ(error_code_of([&] { forward_loss(zero, one); }), ErrorCode::DegenerateNorm);
  std::vector<double> ga, gb;
  EXPECT_EQ(error_code_of([&] { forward_loss_with_grad(one, zero, ga, gb); }), ErrorCode::DegenerateNorm);
}

TEST(BackwardLoss, UniformHeadGivesLogThree) {
  const auto head = make_backward_head(4, {1, 2, 3});
  const std::vector<double> h{0.5, -2, 3, 1};
  EXPECT_NEAR(backward_loss(head, h, 2), 1.0986122886681098, 1e-9);
}

TEST(BackwardLoss, ConfidentCorrectLogits) {
  const std::vector<double> logits{10, 0, 0};
  EXPECT_NEAR(cross_entropy_from_logits(logits, 0), std::log1p(2 * std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(cross_entropy_from_logits(logits, 0), 9.0796e-5, 1e-8);
}

TEST(BackwardLoss, UnknownExpertThrows) {
  const auto head = make_backward_head(2, {1, 2, 3});
  EXPECT_EQ(error_code_of([&] { backward_loss(head, std::vector<double>{1, 1}, 4); }), ErrorCode::UnknownExpert);
}

TEST(CombinedLoss, LambdaZeroIsMeanForward) {
  const std::vector<ExampleLoss> batch{{0.2, 1.0}, {0.4, 3.0}};
  EXPECT_NEAR(combined_loss(batch, 0.0), 0.3, 1e-15);
}

TEST(CombinedLoss, DefaultLambdaArithmetic) {
  const std::vector<ExampleLoss> batch{{0.2, 1.0986}};
  EXPECT_NEAR(combined_loss(batch, ICMConfig{}.lambda), 1.2986, 1e-12);
}

TEST(CombinedLoss, LinearInLambda) {
  const std::vector<ExampleLoss> batch{{0.2, 1.0}, {0.5, 2.0}, {0.1, 0.7}};
  const double l0 = combined_loss(batch, 0.0);
  const double l1 = combined_loss(batch, 1.0);
  for (double lambda : {0.25, 0.5, 2.0, 3.5}) {
    EXPECT_NEAR(combined_loss(batch, lambda), l0 + lambda * (l1 - l0), 1e-12);
  }
}

TEST(CombinedLoss, EmptyBatchThrows) {
  EXPECT_THROW(combined_loss(std::vector<ExampleLoss>{}, 1.0), Error);
}

TEST(IcmGradients, MatchFiniteDifferencesOnRandomConfigurations) {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto r = gradient_cases::icm_case(seed);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_relative_error, 1e-3) << "seed " << seed << ": " << r.worst;
  }
}

TEST(IcmGradients, LambdaZeroLeavesHeadUntouched) {
  const auto cfg = small_encoder();
  IcmModel m;
  m.config.lambda = 0.0;
  m.scorer = init_scorer(cfg, {1, 2, 3}, 1);
  m.head = make_backward_head(cfg.repr_dim, {1, 2, 3});
  m.head.attribution_matrix.data.assign(m.head.attribution_matrix.size(), 0.3);
  auto g = zeros_like(m);
  const auto f = [&](const char* t) { return featurize(t, cfg.features); };
  icm_example_loss(m, f("story"), f("question"), f("explanation"), 2, &g);
  for (double v : g.head.attribution_matrix.data) EXPECT_EQ(v, 0.0);
  for (double v : g.head.bias.data) EXPECT_EQ(v, 0.0);
}

TEST(Curiosity, IdenticalConditioningGivesZeroScore) {
  const auto cfg = small_encoder();
  IcmModel m;
  m.scorer = init_scorer(cfg, {1, 2, 3}, 4);
  m.head = make_backward_head(cfg.repr_dim, {1, 2, 3});
  const auto expl = featurize("an explanation", cfg.features);
  const auto dense = expl.dense();
  std::copy(dense.begin(), dense.end(), m.scorer.expert_embedding.row(0).begin());
  const auto r = curiosity_score(m, featurize("story", cfg.features), featurize("q", cfg.features), expl, 1);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.h_a, r.h_b);
}

TEST(Curiosity, ScoreIsDifferenceOfLogits) {
  const auto cfg = small_encoder();
  IcmModel m;
  m.scorer = init_scorer(cfg, {1, 2, 3}, 4);
  m.head = make_backward_head(cfg.repr_dim, {1, 2, 3});
  const Story s{"s1", "The moon filed a complaint."};
  const auto r = curiosity_score(m, s, Dimension::OriginalityInForm, "Inventive framing.", 3);
  EXPECT_EQ(r.score, r.s_b - r.s_a);
  EXPECT_EQ(r.s_a, score_state_a(m.scorer, s, Dimension::OriginalityInForm, 3).logit);
  EXPECT_EQ(r.s_b, score_state_b(m.scorer, s, Dimension::OriginalityInForm, "Inventive framing.").logit);
}

TEST(Curiosity, ExpertPriorNeedsNoExplanation) {
  const auto cfg = small_encoder();
  IcmModel m;
  m.scorer = init_scorer(cfg, {1, 2, 3}, 4);
  m.head = make_backward_head(cfg.repr_dim, {1, 2, 3});
  const auto story = featurize("story", cfg.features);
  const auto q = featurize("question", cfg.features);
  const auto r = curiosity_score_expert_prior(m, story, q, 2);
  EXPECT_EQ(r.s_a, forward_unconditioned(m.scorer, story, q).logit);
  EXPECT_EQ(r.s_b, forward_state_a(m.scorer, story, q, 2).logit);
  EXPECT_EQ(r.score, r.s_b - r.s_a);
}

TEST(Curiosity, InferenceModeNames) {
  EXPECT_EQ(parse_inference_mode("a"), InferenceMode::ExplanationAvailable);
  EXPECT_EQ(parse_inference_mode("b"), InferenceMode::ExpertPrior);
  EXPECT_EQ(parse_inference_mode(inference_mode_name(InferenceMode::ExpertPrior)), InferenceMode::ExpertPrior);
  EXPECT_THROW(parse_inference_mode("c"), Error);
}

TEST(IcmConfig, JsonRoundTripAndValidation) {
  ICMConfig c;
  c.lambda = 0.5;
  c.forward_loss_space = ForwardLossSpace::LogitSign;
  c.attribution_input = AttributionInput::Separate;
  c.prior_epochs = 4;
  const auto back = icm_config_from_json(icm_config_to_json(c));
  EXPECT_EQ(icm_config_to_json(back), icm_config_to_json(c));
  EXPECT_EQ(error_code_of([] { icm_config_from_json({{"lambda", -1.0}}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(error_code_of([] { icm_config_from_json({{"forward_loss_space", "scalar"}}); }),
            ErrorCode::InvalidConfig);
}

TEST(TrainIcm, SameSeedGivesIdenticalCheckpoints) {
  const auto syn = small_corpus();
  const auto cfg = small_encoder();
  const CorpusFeatures f(syn.corpus, cfg.features);
  const auto idx = all_indices(syn.corpus);
  const auto a = train_icm(syn.corpus, f, idx, cfg, quick_config(), 42);
  const auto b = train_icm(syn.corpus, f, idx, cfg, quick_config(), 42);
  EXPECT_EQ(serialize_icm(a.model, "h"), serialize_icm(b.model, "h"));
  const auto c = train_icm(syn.corpus, f, idx, cfg, quick_config(), 43);
  EXPECT_NE(serialize_icm(a.model, "h"), serialize_icm(c.model, "h"));
}

TEST(TrainIcm, AdaptersKeepBaseBitIdentical) {
  const auto syn = small_corpus();
  const auto cfg = small_encoder();
  const CorpusFeatures f(syn.corpus, cfg.features);
  const auto idx = all_indices(syn.corpus);
  auto no_curiosity = quick_config();
  no_curiosity.optimizer.epochs = 1;
  auto r = train_icm(syn.corpus, f, idx, cfg, no_curiosity, 42);
  // The curiosity phase only moves adapters: rerunning with more epochs
  // leaves every frozen tensor untouched.
  auto more = no_curiosity;
  more.optimizer.epochs = 3;
  const auto r3 = train_icm(syn.corpus, f, idx, cfg, more, 42);
  EXPECT_EQ(r.model.scorer.trunk.input_projection.data, r3.model.scorer.trunk.input_projection.data);
  EXPECT_EQ(r.model.scorer.logit_weight.data, r3.model.scorer.logit_weight.data);
  EXPECT_EQ(r.model.scorer.expert_embedding.data, r3.model.scorer.expert_embedding.data);
  EXPECT_NE(r.model.scorer.trunk.adapters[0]->a.data, r3.model.scorer.trunk.adapters[0]->a.data);
}

TEST(TrainIcm, LogsBothPhases) {
  const auto syn = small_corpus();
  const auto cfg = small_encoder();
  const CorpusFeatures f(syn.corpus, cfg.features);
  const auto r = train_icm(syn.corpus, f, all_indices(syn.corpus), cfg, quick_config(), 1);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_EQ(r.log.front().phase, "prior");
  EXPECT_EQ(r.log.back().phase, "curiosity");
  for (const auto& e : r.log) EXPECT_TRUE(std::isfinite(e.loss));
}

TEST(TrainIcm, AttributesHeldOutExplanationsAboveChance) {
  const auto syn = generate_corpus(default_synthetic_spec());
  const auto cfg = EncoderConfig{};
  const CorpusFeatures f(syn.corpus, cfg.features);
  const auto plan = make_kfold(syn.corpus, 5, 42);
  const auto train = plan.train_indices(0);
  const auto test = plan.test_indices(0);
  const auto r = train_icm(syn.corpus, f, train, cfg, ICMConfig{}, 42);
  EXPECT_GT(attribution_accuracy(r.model, syn.corpus, f, test), 1.0 / 3.0 + 0.15);
}

TEST(Checkpoint, IcmRoundTripAndHashCheck) {
  const auto syn = small_corpus(4);
  const auto cfg = small_encoder();
  const CorpusFeatures f(syn.corpus, cfg.features);
  const auto r = train_icm(syn.corpus, f, all_indices(syn.corpus), cfg, quick_config(), 3);
  const auto text = serialize_icm(r.model, "abc123");
  const auto back = parse_icm(text, "abc123");
  EXPECT_EQ(serialize_icm(back, "abc123"), text);
  EXPECT_EQ(error_code_of([&] { parse_icm(text, "other"); }), ErrorCode::ConfigMismatch);
  EXPECT_NO_THROW(parse_icm(text, "other", true));
}

TEST(Curiosity, JsonlCarriesConfigHash) {
  CuriosityRecord r;
  r.story_id = "syn-0001";
  r.expert_id = 2;
  r.s_a = 0.25;
  r.s_b = 1.0;
  r.score = 0.75;
  const std::vector<CuriosityRecord> rs{r};
  const auto line = nlohmann::json::parse(curiosity_jsonl(rs, "feedbeef"));
  EXPECT_EQ(line.at("config_hash"), "feedbeef");
  EXPECT_EQ(line.at("story_id"), "syn-0001");
  EXPECT_DOUBLE_EQ(line.at("score").get<double>(), 0.75);
}
