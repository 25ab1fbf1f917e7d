#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/encoder.hpp"
#include "curio/icm.hpp"
#include "curio/optimizer.hpp"

namespace curio {

enum class JudgeMode { Icm, Baseline };
std::string_view judge_mode_name(JudgeMode mode) noexcept;

struct JudgeConfig {
  EncoderConfig encoder;
  OptimizerConfig optimizer;
  AdapterConfig adapters;  // disabled by default: the judge trains fully
  bool score_as_text = false;
  bool operator==(const JudgeConfig&) const = default;
};

void validate(const JudgeConfig& config);
nlohmann::json judge_config_to_json(const JudgeConfig& config);
JudgeConfig judge_config_from_json(const nlohmann::json& j);

/// Rendering of the curiosity score used by the score-as-text option.
std::string creat_marker_text(double score);

struct JudgeInput {
  FeatureVector story;
  FeatureVector question;
  FeatureVector score_text;  // "<CREAT> x.xxxx" features when rendered as text
  std::optional<double> curiosity;
  std::optional<int> expert_id;

  [[nodiscard]] JudgeMode mode() const noexcept { return curiosity ? JudgeMode::Icm : JudgeMode::Baseline; }
};

/// ICM mode requires a finite score (MissingScore otherwise); baseline mode
/// forbids one (UnexpectedScore) and conditions on expert_id instead.
JudgeInput build_judge_input(JudgeMode mode, const FeatureVector& story, const FeatureVector& question,
                             int expert_id, std::optional<double> score, const JudgeConfig& config);

struct JudgeParams {
  JudgeConfig config;
  JudgeMode mode = JudgeMode::Icm;
  Trunk trunk;
  // Conditioning block, H-space. ICM: delimiter + score·injection.
  // Baseline: one embedding row per annotator.
  Tensor delimiter;
  Tensor injection;
  Tensor expert_embedding;
  Tensor output_weight;  // R×2, columns (no, yes)
  Tensor output_bias;    // 1×2
  std::vector<int> annotator_ids;

  [[nodiscard]] std::vector<Tensor*> tensors();
  [[nodiscard]] std::vector<const Tensor*> tensors() const;
  [[nodiscard]] std::size_t expert_row(int expert_id) const;
};

JudgeParams init_judge(const JudgeConfig& config, JudgeMode mode, std::vector<int> annotator_ids,
                       std::uint64_t seed);

/// The H-space conditioning vector added to the first pre-activation.
std::vector<double> conditioning_vector(const JudgeParams& params, const JudgeInput& input);

nlohmann::json judge_input_to_json(const JudgeInput& input);

struct VerdictPrediction {
  std::size_t example = 0;
  double probability_yes = 0.5;
  Verdict verdict = Verdict::Yes;
};

/// probability_yes >= 0.5 maps to yes.
Verdict verdict_from_probability(double probability_yes) noexcept;

struct JudgeTrace {
  TrunkTrace trunk;
  std::vector<double> logits;  // (no, yes)
  std::vector<double> probabilities;
};

JudgeTrace judge_forward(const JudgeParams& params, const JudgeInput& input, const ForwardOptions& options = {});
/// Cross-entropy against label (0 = no, 1 = yes); accumulates gradients when
/// grads is non-null.
double judge_example_loss(const JudgeParams& params, const JudgeInput& input, int label, JudgeParams* grads,
                          const ForwardOptions& options = {});

VerdictPrediction predict(const JudgeParams& params, const JudgeInput& input);

struct JudgeTrainResult {
  JudgeParams params;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

/// records must hold exactly one curiosity record per train index, in the
/// same order (ScoreCorpusMismatch otherwise).
JudgeTrainResult train_judge(const Corpus& corpus, const CorpusFeatures& features,
                             std::span<const std::size_t> train_indices, std::span<const CuriosityRecord> records,
                             const JudgeConfig& config, std::uint64_t seed);
JudgeTrainResult train_baseline(const Corpus& corpus, const CorpusFeatures& features,
                                std::span<const std::size_t> train_indices, const JudgeConfig& config,
                                std::uint64_t seed);

/// Builds judge inputs for examples; records are required in ICM mode and
/// aligned with indices.
std::vector<JudgeInput> judge_inputs(const JudgeParams& params, const Corpus& corpus, const CorpusFeatures& features,
                                     std::span<const std::size_t> indices,
                                     std::span<const CuriosityRecord> records = {});

std::vector<VerdictPrediction> predict_examples(const JudgeParams& params, const Corpus& corpus,
                                                const CorpusFeatures& features,
                                                std::span<const std::size_t> indices,
                                                std::span<const CuriosityRecord> records = {});

struct PipelineResult {
  VerdictPrediction prediction;
  CuriosityRecord curiosity;
};

/// Scores with the ICM, then predicts with the judge. ExplanationAvailable
/// mode throws ExplanationRequired without an explanation.
PipelineResult infer_pipeline(const IcmModel& icm, const JudgeParams& judge, const Story& story, Dimension question,
                              int expert_id, const std::optional<std::string>& explanation, InferenceMode mode);

std::string predictions_jsonl(const Corpus& corpus, std::span<const VerdictPrediction> predictions,
                              std::span<const CuriosityRecord> records, InferenceMode mode,
                              const std::string& config_hash);

std::string serialize_judge(const JudgeParams& params, const std::string& config_hash);
JudgeParams parse_judge(std::string_view text, const std::string& expected_hash = {}, bool force = false);

}  // namespace curio
