#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/data_model.hpp"
#include "curio/random.hpp"
#include "curio/tensor.hpp"

namespace curio {

// ---------------------------------------------------------------------------
// Featurization
//
// Character n-grams (n = 3..5, over Unicode code points after ASCII
// lowercasing) are hashed with 64-bit FNV-1a of their UTF-8 bytes, seeded by
// XOR into the offset basis, and bucketed modulo the feature dimension. Texts
// shorter than the smallest n contribute the whole text as a single gram.
// Counts are L2-normalized. Input is truncated to max_chars code points.

struct FeaturizerConfig {
  std::size_t dim = 4096;
  std::size_t max_chars = 4096;
  std::uint64_t hash_seed = 0;
  int min_n = 3;
  int max_n = 5;
  bool operator==(const FeaturizerConfig&) const = default;
};

/// Sparse storage of a dense, L2-normalized D-vector.
struct FeatureVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> index;  // ascending, unique
  std::vector<double> value;

  [[nodiscard]] std::vector<double> dense() const;
  [[nodiscard]] double norm() const;
  [[nodiscard]] bool empty() const noexcept { return index.empty(); }
  bool operator==(const FeatureVector&) const = default;
};

FeatureVector featurize(std::string_view text, const FeaturizerConfig& config);
std::uint32_t ngram_bucket(std::string_view utf8_gram, const FeaturizerConfig& config);

// ---------------------------------------------------------------------------
// Shared MLP trunk: input projection (D×H) -> tanh -> hidden (H×H, tanh)* ->
// linear representation head (H×R). Optional low-rank adapters on every
// matrix: W + (alpha/r)·A·B, A (m×r) zero-initialized, B (r×n) small random.

struct AdapterConfig {
  bool enabled = false;
  int rank = 16;
  double alpha = 32.0;
  double dropout = 0.1;
  bool operator==(const AdapterConfig&) const = default;
};

struct EncoderConfig {
  FeaturizerConfig features;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 1;
  std::size_t repr_dim = 32;
  double init_scale = 0.05;
  bool operator==(const EncoderConfig&) const = default;
};

struct LowRankAdapter {
  Tensor a;  // m×r
  Tensor b;  // r×n
  double scale = 1.0;
  double dropout = 0.0;
};

struct Trunk {
  Tensor input_projection;  // D×H
  Tensor input_bias;        // 1×H
  std::vector<Tensor> hidden_weights;
  std::vector<Tensor> hidden_biases;
  Tensor representation_head;  // H×R
  // One slot per matrix: [input_projection, hidden..., representation_head].
  std::vector<std::optional<LowRankAdapter>> adapters;

  [[nodiscard]] std::vector<Tensor*> tensors();
  [[nodiscard]] std::vector<const Tensor*> tensors() const;
  [[nodiscard]] std::size_t input_dim() const noexcept { return input_projection.rows; }
  [[nodiscard]] std::size_t hidden_dim() const noexcept { return input_projection.cols; }
  [[nodiscard]] std::size_t repr_dim() const noexcept { return representation_head.cols; }
  [[nodiscard]] bool has_adapters() const;
};

Trunk make_trunk(const EncoderConfig& config, const std::string& prefix, Rng& rng);

/// Layer input in D-space as (index, value) pairs plus an optional H-space
/// vector added to the first pre-activation.
struct TrunkInput {
  std::vector<std::uint32_t> index;
  std::vector<double> value;
  std::vector<double> extra_hidden;
};

/// Sums sparse feature vectors and an optional dense D-vector into one input.
TrunkInput combine_inputs(std::size_t dim, std::span<const FeatureVector* const> sparse,
                          std::span<const double> dense = {});

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with adapter dropout > 0
};

struct AdapterCache {
  std::vector<double> mask;       // dropout mask over the layer input (already scaled)
  std::vector<double> projected;  // drop(x)·A, length r
};

struct TrunkTrace {
  TrunkInput input;
  std::vector<std::vector<double>> activations;  // tanh outputs, one per layer
  std::vector<double> representation;
  std::vector<AdapterCache> adapter_cache;  // aligned with Trunk::adapters
};

TrunkTrace trunk_forward(const Trunk& trunk, TrunkInput input, const ForwardOptions& options = {});

/// Accumulates dL/dθ into grads. If grad_input is non-null it receives dL/dx
/// for the full D-dimensional input.
void trunk_backward(const Trunk& trunk, const TrunkTrace& trace, std::span<const double> grad_repr, Trunk& grads,
                    std::vector<double>* grad_input = nullptr, std::vector<double>* grad_extra = nullptr);

/// Wraps every trunk matrix with a low-rank adapter and freezes the base.
void apply_low_rank_adapters(Trunk& trunk, int rank, double alpha, double dropout, Rng& rng);

/// W + scale·A·B for adapter slot `slot`.
Tensor effective_weight(const Trunk& trunk, std::size_t slot);

// ---------------------------------------------------------------------------
// Scorer f_θ: (story, question, conditioning) -> (representation h, logit s).

struct ScorerParams {
  EncoderConfig config;
  Trunk trunk;
  Tensor expert_embedding;  // K×D; row k embeds annotator_ids[k]
  Tensor logit_weight;      // 1×R
  Tensor logit_bias;        // 1×1
  std::vector<int> annotator_ids;

  [[nodiscard]] std::vector<Tensor*> tensors();
  [[nodiscard]] std::vector<const Tensor*> tensors() const;
  /// Row of expert_embedding for an annotator id; throws UnknownExpert.
  [[nodiscard]] std::size_t expert_row(int expert_id) const;
};

ScorerParams init_scorer(const EncoderConfig& config, std::vector<int> annotator_ids, std::uint64_t seed);

struct ScorerOutput {
  std::vector<double> representation;
  double logit = 0.0;
};

struct ScorerTrace {
  TrunkTrace trunk;
  std::optional<std::size_t> expert_row;  // set for state A
  double logit = 0.0;
};

/// State A: f_θ(S, Q_d, onehot(z)).
ScorerTrace forward_state_a(const ScorerParams& params, const FeatureVector& story, const FeatureVector& question,
                            int expert_id, const ForwardOptions& options = {});
/// State B: f_θ(S, Q_d, e). An empty explanation is a zero conditioning vector.
ScorerTrace forward_state_b(const ScorerParams& params, const FeatureVector& story, const FeatureVector& question,
                            const FeatureVector& explanation, const ForwardOptions& options = {});
/// State A without the expert embedding (expert-agnostic prior variant).
ScorerTrace forward_unconditioned(const ScorerParams& params, const FeatureVector& story,
                                  const FeatureVector& question, const ForwardOptions& options = {});

/// Backprop through one scorer pass given dL/dh and dL/ds.
void scorer_backward(const ScorerParams& params, const ScorerTrace& trace, std::span<const double> grad_repr,
                     double grad_logit, ScorerParams& grads);

ScorerOutput score_state_a(const ScorerParams& params, const Story& story, Dimension question, int expert_id);
ScorerOutput score_state_b(const ScorerParams& params, const Story& story, Dimension question,
                           std::string_view explanation);
inline ScorerOutput to_output(const ScorerTrace& trace) { return {trace.trunk.representation, trace.logit}; }

/// Applies adapters to the trunk and freezes every base tensor of the scorer.
void apply_low_rank_adapters(ScorerParams& params, int rank, double alpha, double dropout, std::uint64_t seed);

/// Throws NonFiniteGradient if any gradient entry is NaN/Inf.
template <ParameterSet P>
void check_finite_gradients(const P& grads) {
  for (const auto* t : grads.tensors()) {
    for (double v : t->data) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient in " + t->name);
    }
  }
}

// ---------------------------------------------------------------------------
// Feature cache for a corpus: each story, question, and explanation is
// featurized once.

class CorpusFeatures {
 public:
  CorpusFeatures(const Corpus& corpus, const FeaturizerConfig& config);

  [[nodiscard]] const FeatureVector& story(std::size_t example) const;
  [[nodiscard]] const FeatureVector& question(std::size_t example) const;
  [[nodiscard]] const FeatureVector& explanation(std::size_t example) const;
  [[nodiscard]] const FeatureVector& question_of(Dimension d) const {
    return questions_.at(static_cast<std::size_t>(d));
  }

 private:
  const Corpus* corpus_;
  std::vector<FeatureVector> stories_;
  std::vector<FeatureVector> questions_;
  std::vector<FeatureVector> explanations_;
};

// ---------------------------------------------------------------------------
// Serialization helpers shared by checkpoints.

nlohmann::json encoder_config_to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json adapter_config_to_json(const AdapterConfig& config);
AdapterConfig adapter_config_from_json(const nlohmann::json& j);

nlohmann::json tensors_to_json(const std::vector<const Tensor*>& tensors);
/// Fills tensors by name; shapes must match. Adapter tensors are created on
/// demand by the caller before loading.
void tensors_from_json(const nlohmann::json& j, const std::vector<Tensor*>& tensors);

nlohmann::json trunk_layout_to_json(const Trunk& trunk);
/// Recreates adapter slots recorded in the layout (zero-filled).
void restore_trunk_layout(Trunk& trunk, const nlohmann::json& layout);

}  // namespace curio
