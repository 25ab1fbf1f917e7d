#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/data_model.hpp"
#include "curio/encoder.hpp"
#include "curio/optimizer.hpp"

namespace curio {

/// Representations whose norm falls below this abort training.
inline constexpr double kDegenerateNorm = 1e-12;

enum class ForwardLossSpace { Repr, LogitSign };
enum class AttributionInput { Shared, Separate };
enum class PriorConditioning { Expert, None };

struct ICMConfig {
  double lambda = 1.0;
  ForwardLossSpace forward_loss_space = ForwardLossSpace::Repr;
  AttributionInput attribution_input = AttributionInput::Shared;
  PriorConditioning state_a = PriorConditioning::Expert;
  // Judgment-prior fit of the scorer's logit head on verdicts before the
  // curiosity phase; stands in for the judgment ability of a pretrained
  // judge model. 0 disables it.
  int prior_epochs = 10;
  OptimizerConfig prior_optimizer;
  // Curiosity phase (combined forward/backward objective).
  OptimizerConfig optimizer;
  AdapterConfig adapters{true, 16, 32.0, 0.1};
};

void validate(const ICMConfig& config);
nlohmann::json icm_config_to_json(const ICMConfig& config);
ICMConfig icm_config_from_json(const nlohmann::json& j);

struct BackwardHead {
  Tensor attribution_matrix;  // R×K
  Tensor bias;                // 1×K
  std::vector<int> annotator_ids;
  std::optional<Trunk> encoder;  // separate attribution encoder, if configured

  [[nodiscard]] std::vector<Tensor*> tensors();
  [[nodiscard]] std::vector<const Tensor*> tensors() const;
  [[nodiscard]] std::size_t num_classes() const noexcept { return annotator_ids.size(); }
  [[nodiscard]] std::size_t class_of(int annotator_id) const;
};

BackwardHead make_backward_head(std::size_t repr_dim, std::vector<int> annotator_ids);

struct IcmModel {
  ScorerParams scorer;
  BackwardHead head;
  ICMConfig config;

  [[nodiscard]] std::vector<Tensor*> tensors();
  [[nodiscard]] std::vector<const Tensor*> tensors() const;
};

// ---- losses ---------------------------------------------------------------

/// 1 − cos(h_A, h_B), in [0, 2]. Throws DegenerateNorm if either norm < 1e-12.
double forward_loss(std::span<const double> h_a, std::span<const double> h_b);
/// Same value plus dL/dh_A and dL/dh_B.
double forward_loss_with_grad(std::span<const double> h_a, std::span<const double> h_b, std::vector<double>& grad_a,
                              std::vector<double>& grad_b);

/// −log softmax(logits)[target].
double cross_entropy_from_logits(std::span<const double> logits, std::size_t target);
std::vector<double> softmax(std::span<const double> logits);

/// Attribution logits Wᵀh + b.
std::vector<double> attribution_logits(const BackwardHead& head, std::span<const double> h);
/// −log p(true_expert | h_B). Throws UnknownExpert.
double backward_loss(const BackwardHead& head, std::span<const double> h_b, int true_expert);

struct ExampleLoss {
  double forward = 0.0;
  double backward = 0.0;
};

/// mean(forward + λ·backward). Throws on an empty batch.
double combined_loss(std::span<const ExampleLoss> batch, double lambda);

/// Full differentiable ICM objective for one example; accumulates gradients
/// into grads when non-null. Used by training and the gradient checks.
ExampleLoss icm_example_loss(const IcmModel& model, const FeatureVector& story, const FeatureVector& question,
                             const FeatureVector& explanation, int expert_id, IcmModel* grads,
                             const ForwardOptions& options = {});

// ---- training -------------------------------------------------------------

struct EpochLog {
  std::string phase;  // "prior" or "curiosity"
  int epoch = 0;
  double loss = 0.0;
  double forward = 0.0;
  double backward = 0.0;
  double attribution_accuracy = 0.0;
};

struct IcmTrainResult {
  IcmModel model;
  std::vector<EpochLog> log;
};

IcmTrainResult train_icm(const Corpus& corpus, const CorpusFeatures& features,
                         std::span<const std::size_t> train_indices, const EncoderConfig& encoder,
                         const ICMConfig& config, std::uint64_t seed);

/// Fraction of examples whose explanation is attributed to its true author.
double attribution_accuracy(const IcmModel& model, const Corpus& corpus, const CorpusFeatures& features,
                            std::span<const std::size_t> indices);

// ---- curiosity ------------------------------------------------------------

struct CuriosityRecord {
  std::size_t example = 0;
  std::string story_id;
  Dimension dimension = Dimension::OriginalityInThought;
  int expert_id = 0;
  std::vector<double> h_a;
  std::vector<double> h_b;
  double s_a = 0.0;
  double s_b = 0.0;
  double score = 0.0;  // s_b − s_a
};

/// Explanation-available scoring: state B conditions on the explanation.
CuriosityRecord curiosity_score(const IcmModel& model, const FeatureVector& story, const FeatureVector& question,
                                const FeatureVector& explanation, int expert_id);
CuriosityRecord curiosity_score(const IcmModel& model, const Story& story, Dimension question,
                                std::string_view explanation, int expert_id);
/// Expert-prior scoring: no explanation text is needed. State B receives the
/// expert embedding in place of the explanation and state A is the
/// unconditioned pass over story and question.
CuriosityRecord curiosity_score_expert_prior(const IcmModel& model, const FeatureVector& story,
                                             const FeatureVector& question, int expert_id);

enum class InferenceMode { ExplanationAvailable, ExpertPrior };
std::string_view inference_mode_name(InferenceMode mode) noexcept;
InferenceMode parse_inference_mode(std::string_view s);

std::vector<CuriosityRecord> score_examples(const IcmModel& model, const Corpus& corpus,
                                            const CorpusFeatures& features, std::span<const std::size_t> indices,
                                            InferenceMode mode = InferenceMode::ExplanationAvailable);

std::string curiosity_jsonl(std::span<const CuriosityRecord> records, const std::string& config_hash);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

std::string serialize_icm(const IcmModel& model, const std::string& config_hash);
/// Throws ConfigMismatch when the embedded hash differs from expected_hash
/// unless force is set. An empty expected_hash skips the check.
IcmModel parse_icm(std::string_view text, const std::string& expected_hash = {}, bool force = false);

}  // namespace curio
