#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "curio/eval.hpp"
#include "curio/judge.hpp"
#include "curio/synth.hpp"
#include "support/gradient_cases.hpp"

using namespace curio;

namespace {

// Goldens below come from tests/oracles/featurize_oracle.py.

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

JudgeConfig toy_config() {
  JudgeConfig c;
  c.encoder.features.dim = 8;
  c.encoder.hidden = 2;
  c.encoder.hidden_layers = 1;
  c.encoder.repr_dim = 2;
  return c;
}

JudgeParams toy_judge(JudgeMode mode) {
  auto p = init_judge(toy_config(), mode, {1, 2, 3}, 42);
  for (auto* t : p.tensors()) std::fill(t->data.begin(), t->data.end(), 0.1);
  for (std::size_t i = 0; i < 2; ++i) p.output_weight.at(i, 1) = 0.3;
  p.output_bias.data = {0.0, 0.05};
  return p;
}

JudgeConfig small_config() {
  JudgeConfig c;
  c.encoder.features.dim = 512;
  c.encoder.hidden = 16;
  c.encoder.repr_dim = 8;
  c.optimizer.epochs = 5;
  c.optimizer.grad_accum_steps = 1;
  c.optimizer.base_lr = 0.01;
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

// Curiosity records whose score sign encodes the verdict.
std::vector<CuriosityRecord> separable_records(const Corpus& c, std::span<const std::size_t> indices) {
  std::vector<CuriosityRecord> out;
  for (const auto i : indices) {
    CuriosityRecord r;
    r.example = i;
    r.expert_id = c.examples()[i].annotation.expert_id;
    r.score = c.examples()[i].annotation.verdict == Verdict::Yes ? 1.0 : -1.0;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST(JudgeInput, ModeRules) {
  const auto cfg = toy_config();
  const auto s = featurize("a", cfg.encoder.features);
  const auto q = featurize("b", cfg.encoder.features);
  EXPECT_EQ(error_code_of([&] { build_judge_input(JudgeMode::Icm, s, q, 1, std::nullopt, cfg); }),
            ErrorCode::MissingScore);
  EXPECT_EQ(error_code_of([&] { build_judge_input(JudgeMode::Icm, s, q, 1, std::nan(""), cfg); }),
            ErrorCode::MissingScore);
  EXPECT_EQ(error_code_of([&] { build_judge_input(JudgeMode::Baseline, s, q, 1, 0.2, cfg); }),
            ErrorCode::UnexpectedScore);
  const auto icm = build_judge_input(JudgeMode::Icm, s, q, 1, 0.2, cfg);
  EXPECT_EQ(icm.mode(), JudgeMode::Icm);
  EXPECT_FALSE(icm.expert_id.has_value());
  const auto base = build_judge_input(JudgeMode::Baseline, s, q, 2, std::nullopt, cfg);
  EXPECT_EQ(base.mode(), JudgeMode::Baseline);
  EXPECT_EQ(base.expert_id, 2);
}

TEST(JudgeInput, ZeroScoreLeavesOnlyDelimiter) {
  const auto p = init_judge(toy_config(), JudgeMode::Icm, {1, 2, 3}, 9);
  const auto cfg = toy_config();
  const auto in = build_judge_input(JudgeMode::Icm, featurize("a", cfg.encoder.features),
                                    featurize("b", cfg.encoder.features), 1, 0.0, cfg);
  EXPECT_EQ(conditioning_vector(p, in), p.delimiter.data);
}

TEST(JudgeInput, ScoreSignChangesInput) {
  const auto p = init_judge(toy_config(), JudgeMode::Icm, {1, 2, 3}, 9);
  const auto cfg = toy_config();
  const auto s = featurize("same story", cfg.encoder.features);
  const auto q = featurize("same question", cfg.encoder.features);
  const auto plus = conditioning_vector(p, build_judge_input(JudgeMode::Icm, s, q, 1, 0.3, cfg));
  const auto minus = conditioning_vector(p, build_judge_input(JudgeMode::Icm, s, q, 1, -0.3, cfg));
  EXPECT_NE(plus, minus);
}

TEST(JudgeInput, GoldenSerialization) {
  const auto cfg = toy_config();
  const auto in = build_judge_input(JudgeMode::Icm, featurize("a", cfg.encoder.features),
                                    featurize("b", cfg.encoder.features), 1, 0.5, cfg);
  const auto expected = nlohmann::json::parse(R"({
    "story": {"dim": 8, "index": [4], "value": [1.0]},
    "question": {"dim": 8, "index": [5], "value": [1.0]},
    "conditioning": {"kind": "curiosity", "delimiter": "<CREAT>", "score": 0.5}})");
  EXPECT_EQ(judge_input_to_json(in), expected);
}

TEST(JudgeInput, ScoreAsTextAddsMarkerFeatures) {
  auto cfg = toy_config();
  cfg.encoder.features.dim = 256;
  cfg.score_as_text = true;
  const auto s = featurize("a", cfg.encoder.features);
  const auto in = build_judge_input(JudgeMode::Icm, s, s, 1, 1.5, cfg);
  EXPECT_EQ(in.score_text, featurize("<CREAT> 1.5000", cfg.encoder.features));
  EXPECT_EQ(creat_marker_text(-0.25), "<CREAT> -0.2500");
}

TEST(JudgePredict, ZeroHeadTiesToYes) {
  const auto p = init_judge(toy_config(), JudgeMode::Icm, {1, 2, 3}, 5);
  EXPECT_TRUE(std::all_of(p.output_weight.data.begin(), p.output_weight.data.end(), [](double v) { return v == 0; }));
  const auto cfg = toy_config();
  const auto in = build_judge_input(JudgeMode::Icm, featurize("x", cfg.encoder.features),
                                    featurize("y", cfg.encoder.features), 1, 0.7, cfg);
  const auto pred = predict(p, in);
  EXPECT_EQ(pred.probability_yes, 0.5);
  EXPECT_EQ(pred.verdict, Verdict::Yes);
  EXPECT_EQ(verdict_from_probability(0.5), Verdict::Yes);
  EXPECT_EQ(verdict_from_probability(0.4999999), Verdict::No);
}

TEST(JudgePredict, ToyGoldenProbabilities) {
  const auto cfg = toy_config();
  const auto s = featurize("a", cfg.encoder.features);
  const auto q = featurize("b", cfg.encoder.features);
  const auto icm = toy_judge(JudgeMode::Icm);
  const auto t = judge_forward(icm, build_judge_input(JudgeMode::Icm, s, q, 1, 0.5, cfg));
  EXPECT_NEAR(t.trunk.representation[0], 0.03646368824073383, 1e-15);
  EXPECT_NEAR(t.probabilities[1], 0.51614075857394071, 1e-15);
  const auto base = toy_judge(JudgeMode::Baseline);
  const auto b = predict(base, build_judge_input(JudgeMode::Baseline, s, q, 2, std::nullopt, cfg));
  EXPECT_NEAR(b.probability_yes, 0.51597845898543415, 1e-15);
}

TEST(JudgePredict, YesWeightIsMonotone) {
  const auto cfg = toy_config();
  const auto in = build_judge_input(JudgeMode::Icm, featurize("a", cfg.encoder.features),
                                    featurize("b", cfg.encoder.features), 1, 0.5, cfg);
  auto p = toy_judge(JudgeMode::Icm);
  double last = predict(p, in).probability_yes;
  for (int step = 0; step < 5; ++step) {
    for (std::size_t i = 0; i < 2; ++i) p.output_weight.at(i, 1) += 0.5;
    const double now = predict(p, in).probability_yes;
    EXPECT_GT(now, last);
    last = now;
  }
}

TEST(JudgePredict, UnknownExpertInBaseline) {
  const auto p = toy_judge(JudgeMode::Baseline);
  const auto cfg = toy_config();
  const auto s = featurize("a", cfg.encoder.features);
  EXPECT_EQ(error_code_of([&] { predict(p, build_judge_input(JudgeMode::Baseline, s, s, 9, std::nullopt, cfg)); }),
            ErrorCode::UnknownExpert);
}

TEST(JudgeGradients, MatchFiniteDifferencesOnRandomConfigurations) {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const auto r = gradient_cases::judge_case(seed);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_relative_error, 1e-3) << "seed " << seed << ": " << r.worst;
  }
}

TEST(TrainJudge, SeparableScoresReachFullAccuracy) {
  const auto syn = small_corpus(6);
  auto cfg = small_config();
  cfg.optimizer.epochs = 50;
  const CorpusFeatures f(syn.corpus, cfg.encoder.features);
  const auto idx = all_indices(syn.corpus);
  const auto records = separable_records(syn.corpus, idx);
  const auto r = train_judge(syn.corpus, f, idx, records, cfg, 3);
  EXPECT_EQ(r.train_accuracy, 1.0);
  EXPECT_EQ(r.epoch_loss.size(), 50u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(TrainJudge, SameSeedIsReproducible) {
  const auto syn = small_corpus(4);
  const auto cfg = small_config();
  const CorpusFeatures f(syn.corpus, cfg.encoder.features);
  const auto idx = all_indices(syn.corpus);
  const auto records = separable_records(syn.corpus, idx);
  const auto a = train_judge(syn.corpus, f, idx, records, cfg, 11);
  const auto b = train_judge(syn.corpus, f, idx, records, cfg, 11);
  EXPECT_EQ(serialize_judge(a.params, "h"), serialize_judge(b.params, "h"));
  const auto c = train_baseline(syn.corpus, f, idx, cfg, 11);
  const auto d = train_baseline(syn.corpus, f, idx, cfg, 11);
  EXPECT_EQ(serialize_judge(c.params, "h"), serialize_judge(d.params, "h"));
}

TEST(TrainJudge, RecordsMustMatchTheTrainingSet) {
  const auto syn = small_corpus(4);
  const auto cfg = small_config();
  const CorpusFeatures f(syn.corpus, cfg.encoder.features);
  const auto idx = all_indices(syn.corpus);
  auto records = separable_records(syn.corpus, idx);
  records.pop_back();
  EXPECT_EQ(error_code_of([&] { train_judge(syn.corpus, f, idx, records, cfg, 1); }),
            ErrorCode::ScoreCorpusMismatch);
  records = separable_records(syn.corpus, idx);
  std::swap(records[0], records[1]);
  EXPECT_EQ(error_code_of([&] { train_judge(syn.corpus, f, idx, records, cfg, 1); }),
            ErrorCode::ScoreCorpusMismatch);
}

TEST(TrainBaseline, MajorityClassPredictsYesEverywhere) {
  const auto syn = small_corpus(4);
  auto examples = syn.corpus.examples();
  for (auto& ex : examples) ex.annotation.verdict = Verdict::Yes;
  const Corpus all_yes(syn.corpus.stories(), examples);
  const auto cfg = small_config();
  const CorpusFeatures f(all_yes, cfg.encoder.features);
  const auto idx = all_indices(all_yes);
  const auto r = train_baseline(all_yes, f, idx, cfg, 2);
  const auto preds = predict_examples(r.params, all_yes, f, idx);
  std::vector<int> pred, truth(idx.size(), 1);
  std::vector<double> prob;
  for (const auto& p : preds) {
    pred.push_back(verdict_label(p.verdict));
    prob.push_back(p.probability_yes);
  }
  EXPECT_TRUE(std::all_of(pred.begin(), pred.end(), [](int v) { return v == 1; }));
  const auto m = evaluate(pred, prob, truth);
  EXPECT_EQ(m.get("f1"), 1.0);
  EXPECT_EQ(m.get("kappa"), 0.0);
  EXPECT_TRUE(m.undefined("kappa"));
}

TEST(JudgeCheckpoint, RoundTripAndHashCheck) {
  const auto syn = small_corpus(4);
  const auto cfg = small_config();
  const CorpusFeatures f(syn.corpus, cfg.encoder.features);
  const auto idx = all_indices(syn.corpus);
  const auto r = train_baseline(syn.corpus, f, idx, cfg, 4);
  const auto text = serialize_judge(r.params, "abc");
  const auto back = parse_judge(text, "abc");
  EXPECT_EQ(serialize_judge(back, "abc"), text);
  const auto a = predict_examples(r.params, syn.corpus, f, idx);
  const auto b = predict_examples(back, syn.corpus, f, idx);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].probability_yes, b[i].probability_yes);
  EXPECT_EQ(error_code_of([&] { parse_judge(text, "other"); }), ErrorCode::ConfigMismatch);
  EXPECT_NO_THROW(parse_judge(text, "other", true));
}

TEST(Pipeline, ComposesScoringAndPrediction) {
  const auto syn = small_corpus(4);
  EncoderConfig enc;
  enc.features.dim = 512;
  enc.hidden = 16;
  enc.repr_dim = 8;
  ICMConfig icm_cfg;
  icm_cfg.prior_epochs = 1;
  icm_cfg.optimizer.epochs = 1;
  icm_cfg.adapters.rank = 4;
  const CorpusFeatures f(syn.corpus, enc.features);
  const auto idx = all_indices(syn.corpus);
  const auto icm = train_icm(syn.corpus, f, idx, enc, icm_cfg, 1).model;
  auto jcfg = small_config();
  jcfg.encoder = enc;
  const auto records = score_examples(icm, syn.corpus, f, idx);
  const auto judge = train_judge(syn.corpus, f, idx, records, jcfg, 2).params;

  const auto& ex = syn.corpus.examples()[3];
  const auto& story = syn.corpus.story_of(ex);
  const auto r = infer_pipeline(icm, judge, story, ex.dimension, ex.annotation.expert_id, ex.annotation.explanation,
                                InferenceMode::ExplanationAvailable);
  const auto manual_score = curiosity_score(icm, story, ex.dimension, ex.annotation.explanation, ex.annotation.expert_id);
  EXPECT_EQ(r.curiosity.score, manual_score.score);
  const auto manual = predict(judge, build_judge_input(JudgeMode::Icm, f.story(3), f.question(3),
                                                       ex.annotation.expert_id, manual_score.score, jcfg));
  EXPECT_EQ(r.prediction.probability_yes, manual.probability_yes);

  EXPECT_EQ(error_code_of([&] {
              infer_pipeline(icm, judge, story, ex.dimension, ex.annotation.expert_id, std::nullopt,
                             InferenceMode::ExplanationAvailable);
            }),
            ErrorCode::ExplanationRequired);
  const auto prior = infer_pipeline(icm, judge, story, ex.dimension, ex.annotation.expert_id, std::nullopt,
                                    InferenceMode::ExpertPrior);
  EXPECT_TRUE(std::isfinite(prior.prediction.probability_yes));
  EXPECT_EQ(prior.curiosity.score, curiosity_score_expert_prior(icm, f.story(3), f.question(3), ex.annotation.expert_id).score);
}
