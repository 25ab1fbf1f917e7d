#include "curio/judge.hpp"
#include "json_field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace curio {

using json = nlohmann::json;

std::string_view judge_mode_name(JudgeMode mode) noexcept { return mode == JudgeMode::Icm ? "icm" : "baseline"; }

void validate(const JudgeConfig& c) {
  validate(c.optimizer);
  if (c.encoder.hidden == 0 || c.encoder.repr_dim == 0 || c.encoder.features.dim == 0) {
    throw Error(ErrorCode::InvalidConfig, "judge.encoder dimensions must be positive");
  }
}

json judge_config_to_json(const JudgeConfig& c) {
  return {{"encoder", encoder_config_to_json(c.encoder)},
          {"optimizer", optimizer_config_to_json(c.optimizer)},
          {"adapters", adapter_config_to_json(c.adapters)},
          {"score_as_text", c.score_as_text}};
}

JudgeConfig judge_config_from_json(const json& j) {
  JudgeConfig c;
  detail::reject_unknown(j, judge_config_to_json(c), ErrorCode::InvalidConfig, "judge");
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
  if (j.contains("adapters")) c.adapters = adapter_config_from_json(j.at("adapters"));
  detail::read_field(j, "score_as_text", c.score_as_text, ErrorCode::InvalidConfig, "judge");
  validate(c);
  return c;
}

std::string creat_marker_text(double score) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "<CREAT> %.4f", score);
  return buf.data();
}

JudgeInput build_judge_input(JudgeMode mode, const FeatureVector& story, const FeatureVector& question,
                             int expert_id, std::optional<double> score, const JudgeConfig& config) {
  JudgeInput in;
  in.story = story;
  in.question = question;
  if (mode == JudgeMode::Icm) {
    if (!score) throw Error(ErrorCode::MissingScore, "ICM judge input requires a curiosity score");
    if (!std::isfinite(*score)) throw Error(ErrorCode::MissingScore, "curiosity score is not finite");
    in.curiosity = *score;
    if (config.score_as_text) in.score_text = featurize(creat_marker_text(*score), config.encoder.features);
  } else {
    if (score) throw Error(ErrorCode::UnexpectedScore, "baseline judge input must not carry a curiosity score");
    in.expert_id = expert_id;
  }
  return in;
}

// ---------------------------------------------------------------------------

std::vector<Tensor*> JudgeParams::tensors() {
  auto out = trunk.tensors();
  if (mode == JudgeMode::Icm) {
    out.push_back(&delimiter);
    out.push_back(&injection);
  } else {
    out.push_back(&expert_embedding);
  }
  out.push_back(&output_weight);
  out.push_back(&output_bias);
  return out;
}

std::vector<const Tensor*> JudgeParams::tensors() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<JudgeParams*>(this)->tensors()) out.push_back(t);
  return out;
}

std::size_t JudgeParams::expert_row(int expert_id) const {
  const auto it = std::find(annotator_ids.begin(), annotator_ids.end(), expert_id);
  if (it == annotator_ids.end()) {
    throw Error(ErrorCode::UnknownExpert, "annotator id " + std::to_string(expert_id) + " is not known to the judge");
  }
  return static_cast<std::size_t>(it - annotator_ids.begin());
}

JudgeParams init_judge(const JudgeConfig& config, JudgeMode mode, std::vector<int> annotator_ids,
                       std::uint64_t seed) {
  validate(config);
  Rng rng(seed);
  JudgeParams p;
  p.config = config;
  p.mode = mode;
  p.annotator_ids = std::move(annotator_ids);
  p.trunk = make_trunk(config.encoder, "judge.", rng);
  const std::size_t h = config.encoder.hidden;
  const double scale = config.encoder.init_scale;
  auto fill = [&](Tensor& t) {
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
  };
  if (mode == JudgeMode::Icm) {
    p.delimiter = Tensor("judge.delimiter", 1, h);
    p.injection = Tensor("judge.injection", 1, h);
    fill(p.delimiter);
    fill(p.injection);
  } else {
    p.expert_embedding = Tensor("judge.expert_embedding", p.annotator_ids.size(), h);
    fill(p.expert_embedding);
  }
  p.output_weight = Tensor("judge.output_weight", config.encoder.repr_dim, 2);
  p.output_bias = Tensor("judge.output_bias", 1, 2);
  if (config.adapters.enabled) {
    Rng arng(derive_seed(seed, 1));
    apply_low_rank_adapters(p.trunk, config.adapters.rank, config.adapters.alpha, config.adapters.dropout, arng);
  }
  return p;
}

std::vector<double> conditioning_vector(const JudgeParams& params, const JudgeInput& input) {
  if (params.mode == JudgeMode::Icm) {
    if (!input.curiosity) throw Error(ErrorCode::MissingScore, "ICM judge requires a curiosity score");
    std::vector<double> v(params.delimiter.data);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += *input.curiosity * params.injection.data[j];
    return v;
  }
  if (input.curiosity) throw Error(ErrorCode::UnexpectedScore, "baseline judge received a curiosity score");
  if (!input.expert_id) throw Error(ErrorCode::UnknownExpert, "baseline judge input lacks an expert id");
  const auto row = params.expert_embedding.row(params.expert_row(*input.expert_id));
  return {row.begin(), row.end()};
}

json judge_input_to_json(const JudgeInput& input) {
  auto fv = [](const FeatureVector& f) { return json{{"dim", f.dim}, {"index", f.index}, {"value", f.value}}; };
  json j{{"story", fv(input.story)}, {"question", fv(input.question)}};
  if (input.curiosity) {
    j["conditioning"] = {{"kind", "curiosity"}, {"delimiter", "<CREAT>"}, {"score", *input.curiosity}};
  } else {
    j["conditioning"] = {{"kind", "expert"}, {"expert_id", input.expert_id.value_or(0)}};
  }
  if (!input.score_text.empty()) j["score_text"] = fv(input.score_text);
  return j;
}

Verdict verdict_from_probability(double probability_yes) noexcept {
  return probability_yes >= 0.5 ? Verdict::Yes : Verdict::No;
}

JudgeTrace judge_forward(const JudgeParams& params, const JudgeInput& input, const ForwardOptions& options) {
  std::vector<const FeatureVector*> parts{&input.story, &input.question};
  if (!input.score_text.empty()) parts.push_back(&input.score_text);
  auto trunk_in = combine_inputs(params.config.encoder.features.dim, parts);
  trunk_in.extra_hidden = conditioning_vector(params, input);
  JudgeTrace trace;
  trace.trunk = trunk_forward(params.trunk, std::move(trunk_in), options);
  const auto& h = trace.trunk.representation;
  trace.logits.assign(params.output_bias.data.begin(), params.output_bias.data.end());
  for (std::size_t i = 0; i < h.size(); ++i) {
    trace.logits[0] += params.output_weight.at(i, 0) * h[i];
    trace.logits[1] += params.output_weight.at(i, 1) * h[i];
  }
  trace.probabilities = softmax(trace.logits);
  return trace;
}

double judge_example_loss(const JudgeParams& params, const JudgeInput& input, int label, JudgeParams* grads,
                          const ForwardOptions& options) {
  const auto trace = judge_forward(params, input, options);
  const auto cls = static_cast<std::size_t>(label != 0 ? 1 : 0);
  const double loss = cross_entropy_from_logits(trace.logits, cls);
  if (grads == nullptr) return loss;

  std::array<double, 2> dl{trace.probabilities[0], trace.probabilities[1]};
  dl[cls] -= 1.0;
  const auto& h = trace.trunk.representation;
  std::vector<double> gh(h.size(), 0.0);
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      if (params.output_weight.trainable) grads->output_weight.at(i, c) += h[i] * dl[c];
      gh[i] += params.output_weight.at(i, c) * dl[c];
    }
  }
  if (params.output_bias.trainable) {
    grads->output_bias.data[0] += dl[0];
    grads->output_bias.data[1] += dl[1];
  }
  std::vector<double> g_extra;
  trunk_backward(params.trunk, trace.trunk, gh, grads->trunk, nullptr, &g_extra);
  if (params.mode == JudgeMode::Icm) {
    for (std::size_t j = 0; j < g_extra.size(); ++j) {
      if (params.delimiter.trainable) grads->delimiter.data[j] += g_extra[j];
      if (params.injection.trainable) grads->injection.data[j] += *input.curiosity * g_extra[j];
    }
  } else if (params.expert_embedding.trainable) {
    auto row = grads->expert_embedding.row(params.expert_row(*input.expert_id));
    for (std::size_t j = 0; j < g_extra.size(); ++j) row[j] += g_extra[j];
  }
  return loss;
}

VerdictPrediction predict(const JudgeParams& params, const JudgeInput& input) {
  const auto trace = judge_forward(params, input);
  VerdictPrediction p;
  p.probability_yes = trace.probabilities[1];
  p.verdict = verdict_from_probability(p.probability_yes);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<JudgeInput> judge_inputs(const JudgeParams& params, const Corpus& corpus, const CorpusFeatures& features,
                                     std::span<const std::size_t> indices, std::span<const CuriosityRecord> records) {
  if (params.mode == JudgeMode::Icm) {
    if (records.size() != indices.size()) {
      throw Error(ErrorCode::ScoreCorpusMismatch, "expected " + std::to_string(indices.size()) +
                                                      " curiosity records, got " + std::to_string(records.size()));
    }
  } else if (!records.empty()) {
    throw Error(ErrorCode::UnexpectedScore, "baseline judge takes no curiosity records");
  }
  std::vector<JudgeInput> out;
  out.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    const auto& ex = corpus.examples().at(i);
    std::optional<double> score;
    if (params.mode == JudgeMode::Icm) {
      const auto& r = records[k];
      if (r.example != i || r.expert_id != ex.annotation.expert_id) {
        throw Error(ErrorCode::ScoreCorpusMismatch,
                    "curiosity record " + std::to_string(k) + " does not match example " + corpus.example_key(i));
      }
      score = r.score;
    }
    out.push_back(build_judge_input(params.mode, features.story(i), features.question(i), ex.annotation.expert_id,
                                    score, params.config));
  }
  return out;
}

namespace {

JudgeTrainResult fit(JudgeParams params, const Corpus& corpus, std::span<const std::size_t> train_indices,
                     const std::vector<JudgeInput>& inputs, std::uint64_t seed) {
  JudgeTrainResult result;
  const auto& cfg = params.config.optimizer;
  // Position of each example index within inputs.
  std::vector<std::size_t> position(corpus.examples().size(), 0);
  for (std::size_t k = 0; k < train_indices.size(); ++k) position[train_indices[k]] = k;

  Trainer<JudgeParams> trainer(params, cfg, train_indices.size());
  Rng dropout_rng(derive_seed(seed, 11));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_indices, derive_seed(seed, 12), epoch);
    result.epoch_loss.push_back(train_epoch(trainer, order, [&](std::size_t i, JudgeParams& g) {
      const int y = verdict_label(corpus.examples()[i].annotation.verdict);
      return judge_example_loss(params, inputs[position[i]], y, &g, ForwardOptions{true, &dropout_rng});
    }));
  }
  if (!all_finite(params)) throw Error(ErrorCode::NonFiniteGradient, "judge parameters are not finite after training");
  std::size_t correct = 0;
  for (std::size_t k = 0; k < train_indices.size(); ++k) {
    const auto p = predict(params, inputs[k]);
    if (p.verdict == corpus.examples()[train_indices[k]].annotation.verdict) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_indices.size());
  result.params = std::move(params);
  return result;
}

std::vector<int> train_annotators(const Corpus& corpus, std::span<const std::size_t> indices) {
  std::vector<int> ids;
  for (const auto i : indices) ids.push_back(corpus.examples().at(i).annotation.expert_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

JudgeTrainResult train_judge(const Corpus& corpus, const CorpusFeatures& features,
                             std::span<const std::size_t> train_indices, std::span<const CuriosityRecord> records,
                             const JudgeConfig& config, std::uint64_t seed) {
  if (train_indices.empty()) throw Error(ErrorCode::InvalidConfig, "train_judge: empty training split");
  auto params = init_judge(config, JudgeMode::Icm, train_annotators(corpus, train_indices), seed);
  const auto inputs = judge_inputs(params, corpus, features, train_indices, records);
  return fit(std::move(params), corpus, train_indices, inputs, seed);
}

JudgeTrainResult train_baseline(const Corpus& corpus, const CorpusFeatures& features,
                                std::span<const std::size_t> train_indices, const JudgeConfig& config,
                                std::uint64_t seed) {
  if (train_indices.empty()) throw Error(ErrorCode::InvalidConfig, "train_baseline: empty training split");
  auto params = init_judge(config, JudgeMode::Baseline, train_annotators(corpus, train_indices), seed);
  const auto inputs = judge_inputs(params, corpus, features, train_indices);
  return fit(std::move(params), corpus, train_indices, inputs, seed);
}

std::vector<VerdictPrediction> predict_examples(const JudgeParams& params, const Corpus& corpus,
                                                const CorpusFeatures& features,
                                                std::span<const std::size_t> indices,
                                                std::span<const CuriosityRecord> records) {
  const auto inputs = judge_inputs(params, corpus, features, indices, records);
  std::vector<VerdictPrediction> out;
  out.reserve(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto p = predict(params, inputs[k]);
    p.example = indices[k];
    out.push_back(p);
  }
  return out;
}

PipelineResult infer_pipeline(const IcmModel& icm, const JudgeParams& judge, const Story& story, Dimension question,
                              int expert_id, const std::optional<std::string>& explanation, InferenceMode mode) {
  if (icm.scorer.config.features != judge.config.encoder.features) {
    throw Error(ErrorCode::ConfigMismatch, "ICM and judge checkpoints use different featurizers");
  }
  const auto& fc = icm.scorer.config.features;
  const auto s = featurize(story.text, fc);
  const auto q = featurize(question_text(question), fc);
  PipelineResult out;
  if (mode == InferenceMode::ExplanationAvailable) {
    if (!explanation || explanation->empty()) {
      throw Error(ErrorCode::ExplanationRequired, "explanation-available mode needs an explanation");
    }
    out.curiosity = curiosity_score(icm, s, q, featurize(*explanation, fc), expert_id);
  } else {
    out.curiosity = curiosity_score_expert_prior(icm, s, q, expert_id);
  }
  out.curiosity.story_id = story.id;
  out.curiosity.dimension = question;
  const std::optional<double> score =
      judge.mode == JudgeMode::Icm ? std::optional<double>(out.curiosity.score) : std::nullopt;
  out.prediction = predict(judge, build_judge_input(judge.mode, s, q, expert_id, score, judge.config));
  return out;
}

std::string predictions_jsonl(const Corpus& corpus, std::span<const VerdictPrediction> predictions,
                              std::span<const CuriosityRecord> records, InferenceMode mode,
                              const std::string& config_hash) {
  std::string out;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const auto& p = predictions[k];
    const auto& ex = corpus.examples().at(p.example);
    json j{{"story_id", corpus.story_of(ex).id},
           {"dimension", dimension_name(ex.dimension)},
           {"expert_id", ex.annotation.expert_id},
           {"prob_yes", p.probability_yes},
           {"verdict", verdict_name(p.verdict)},
           {"curiosity_score", records.empty() ? json(nullptr) : json(records[k].score)},
           {"mode", records.empty() ? "baseline" : inference_mode_name(mode)},
           {"config_hash", config_hash}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_judge(const JudgeParams& params, const std::string& config_hash) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["kind"] = "judge";
  j["mode"] = judge_mode_name(params.mode);
  j["config_hash"] = config_hash;
  j["judge"] = judge_config_to_json(params.config);
  j["annotator_ids"] = params.annotator_ids;
  j["layout"] = trunk_layout_to_json(params.trunk);
  j["tensors"] = tensors_to_json(params.tensors());
  return j.dump();
}

JudgeParams parse_judge(std::string_view text, const std::string& expected_hash, bool force) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("judge checkpoint: ") + e.what());
  }
  try {
    if (j.at("kind") != "judge") throw Error(ErrorCode::MalformedRecord, "checkpoint is not a judge checkpoint");
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw Error(ErrorCode::MalformedRecord, "unsupported checkpoint format version");
    }
    const auto hash = j.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && hash != expected_hash && !force) {
      throw Error(ErrorCode::ConfigMismatch,
                  "checkpoint config hash " + hash + " does not match run config " + expected_hash + " (use --force)");
    }
    const auto config = judge_config_from_json(j.at("judge"));
    const auto mode = j.at("mode").get<std::string>() == "icm" ? JudgeMode::Icm : JudgeMode::Baseline;
    auto params = init_judge(config, mode, j.at("annotator_ids").get<std::vector<int>>(), 0);
    restore_trunk_layout(params.trunk, j.at("layout"));
    tensors_from_json(j.at("tensors"), params.tensors());
    return params;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("judge checkpoint: ") + e.what());
  }
}

}  // namespace curio
