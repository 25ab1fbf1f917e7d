#pragma once

#include <string>
#include <vector>

#include "curio/encoder.hpp"
#include "curio/icm.hpp"
#include "curio/judge.hpp"
#include "curio/random.hpp"
#include "support/gradcheck.hpp"

// Randomized gradient-check configurations for the scorer, the ICM objective
// and the judge. Each case draws its own architecture, inputs and loss.
namespace gradient_cases {

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> words{"lantern", "quiet", "orbit", "salt", "memory", "glass",
                                              "river",   "ember", "fable", "drift", "north", "velvet"};
  return words;
}

inline std::string random_text(curio::Rng& rng, int min_words, int max_words) {
  const auto n = min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_words - min_words + 1)));
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += rng.pick(std::span<const std::string>(word_pool()));
  }
  return out;
}

inline curio::EncoderConfig random_encoder(curio::Rng& rng) {
  curio::EncoderConfig c;
  c.features.dim = 16 + 8 * rng.below(3);
  c.hidden = 3 + rng.below(6);
  c.hidden_layers = rng.below(3);
  c.repr_dim = 2 + rng.below(5);
  c.init_scale = 0.4;
  return c;
}

inline int adapter_rank(curio::Rng& rng, const curio::EncoderConfig& c) {
  const auto max_rank = std::min(c.hidden, c.repr_dim);
  return 1 + static_cast<int>(rng.below(max_rank));
}

template <typename TrunkT>
void randomize_adapters(TrunkT& trunk, curio::Rng& rng) {
  for (auto& slot : trunk.adapters) {
    if (!slot) continue;
    for (auto& v : slot->a.data) v = rng.uniform(-0.2, 0.2);
  }
}

inline void randomize(curio::Tensor& t, curio::Rng& rng, double scale) {
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
}

/// Scorer: L = c·h_A + d·s_A + 0.5·s_A² + c'·h_B + d'·s_B over states A and B.
inline gradcheck::Result encoder_case(std::uint64_t seed) {
  using namespace curio;
  Rng rng(seed);
  const auto cfg = random_encoder(rng);
  auto params = init_scorer(cfg, {1, 2, 3}, rng.next_u64());
  randomize(params.logit_bias, rng, 0.3);
  if (rng.bernoulli(0.5)) {
    apply_low_rank_adapters(params, adapter_rank(rng, cfg), 4.0, 0.0, rng.next_u64());
    randomize_adapters(params.trunk, rng);
  }
  const auto story = featurize(random_text(rng, 3, 8), cfg.features);
  const auto question = featurize(random_text(rng, 2, 4), cfg.features);
  const auto expl = featurize(random_text(rng, 1, 5), cfg.features);
  const int expert = 1 + static_cast<int>(rng.below(3));
  std::vector<double> ca(cfg.repr_dim), cb(cfg.repr_dim);
  for (auto& v : ca) v = rng.uniform(-1, 1);
  for (auto& v : cb) v = rng.uniform(-1, 1);
  const double da = rng.uniform(-1, 1);
  const double db = rng.uniform(-1, 1);

  const auto loss = [&](const ScorerParams& p) {
    const auto a = forward_state_a(p, story, question, expert);
    const auto b = forward_state_b(p, story, question, expl);
    double l = da * a.logit + 0.5 * a.logit * a.logit + db * b.logit;
    for (std::size_t j = 0; j < cfg.repr_dim; ++j) {
      l += ca[j] * a.trunk.representation[j] + cb[j] * b.trunk.representation[j];
    }
    return l;
  };
  auto grads = zeros_like(params);
  const auto a = forward_state_a(params, story, question, expert);
  const auto b = forward_state_b(params, story, question, expl);
  scorer_backward(params, a, ca, da + a.logit, grads);
  scorer_backward(params, b, cb, db, grads);
  return gradcheck::check(params, grads, loss);
}

/// ICM objective forward + λ·backward with random λ, prior conditioning,
/// attribution input and adapters.
inline gradcheck::Result icm_case(std::uint64_t seed) {
  using namespace curio;
  Rng rng(seed);
  const auto cfg = random_encoder(rng);
  const std::vector<int> ids{1, 2, 3};
  IcmModel model;
  model.config.lambda = rng.uniform(0.0, 2.0);
  model.config.state_a = rng.bernoulli(0.5) ? PriorConditioning::Expert : PriorConditioning::None;
  model.config.attribution_input = rng.bernoulli(0.5) ? AttributionInput::Shared : AttributionInput::Separate;
  model.scorer = init_scorer(cfg, ids, rng.next_u64());
  model.head = make_backward_head(cfg.repr_dim, ids);
  randomize(model.head.attribution_matrix, rng, 1.0);
  randomize(model.head.bias, rng, 0.5);
  if (model.config.attribution_input == AttributionInput::Separate) {
    model.head.encoder = make_trunk(cfg, "attribution.", rng);
  }
  if (rng.bernoulli(0.5)) {
    apply_low_rank_adapters(model.scorer, adapter_rank(rng, cfg), 4.0, 0.0, rng.next_u64());
    randomize_adapters(model.scorer.trunk, rng);
  }
  const auto story = featurize(random_text(rng, 3, 8), cfg.features);
  const auto question = featurize(random_text(rng, 2, 4), cfg.features);
  const auto expl = featurize(random_text(rng, 1, 5), cfg.features);
  const int expert = 1 + static_cast<int>(rng.below(3));

  const auto loss = [&](const IcmModel& m) {
    const auto l = icm_example_loss(m, story, question, expl, expert, nullptr);
    return l.forward + m.config.lambda * l.backward;
  };
  auto grads = zeros_like(model);
  icm_example_loss(model, story, question, expl, expert, &grads);
  return gradcheck::check(model, grads, loss);
}

/// Judge cross-entropy in ICM or baseline mode, optionally with adapters
/// and the score rendered as text.
inline gradcheck::Result judge_case(std::uint64_t seed) {
  using namespace curio;
  Rng rng(seed);
  JudgeConfig cfg;
  cfg.encoder = random_encoder(rng);
  cfg.score_as_text = rng.bernoulli(0.5);
  if (rng.bernoulli(0.5)) cfg.adapters = {true, adapter_rank(rng, cfg.encoder), 4.0, 0.0};
  const auto mode = rng.bernoulli(0.5) ? JudgeMode::Icm : JudgeMode::Baseline;
  auto params = init_judge(cfg, mode, {1, 2, 3}, rng.next_u64());
  randomize(params.output_weight, rng, 1.0);
  randomize(params.output_bias, rng, 0.5);
  randomize_adapters(params.trunk, rng);
  const auto story = featurize(random_text(rng, 3, 8), cfg.encoder.features);
  const auto question = featurize(random_text(rng, 2, 4), cfg.encoder.features);
  const int expert = 1 + static_cast<int>(rng.below(3));
  const std::optional<double> score =
      mode == JudgeMode::Icm ? std::optional<double>(rng.uniform(-2, 2)) : std::nullopt;
  const auto input = build_judge_input(mode, story, question, expert, score, cfg);
  const int label = static_cast<int>(rng.below(2));

  const auto loss = [&](const JudgeParams& p) { return judge_example_loss(p, input, label, nullptr); };
  auto grads = zeros_like(params);
  judge_example_loss(params, input, label, &grads);
  return gradcheck::check(params, grads, loss);
}

}  // namespace gradient_cases
