#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/data_model.hpp"
#include "curio/encoder.hpp"
#include "curio/icm.hpp"

namespace curio {

inline constexpr std::size_t kLatentDim = 4;

struct AnnotatorProfile {
  int annotator_id = 1;
  double bias = 0.0;
  // b_a(x) = bias + slope·x
  std::vector<double> slope;
  std::string style;  // key into the style lexicons; defaults to the id
  bool noise = false;
};

struct SyntheticSpec {
  std::size_t n_stories = 48;
  std::vector<Dimension> dimensions{kAllDimensions.begin(), kAllDimensions.end()};
  std::vector<AnnotatorProfile> annotators;
  // f_d(x) = evidence_scale · β_d·x with β_d mixing a shared and a
  // dimension-specific unit direction.
  double evidence_scale = 1.5;
  double dimension_correlation = 0.5;
  double temperature = 1.0;
  // Probability that each latent phrase in the story reflects the true level.
  double leak_strength = 0.9;
  int filler_sentences = 2;
  // Log-likelihood ratio carried by one verdict cue in an explanation.
  double cue_woe = 4.0;
  int n_cues = 1;
  std::uint64_t seed = 42;
};

/// Default TTCW-shaped spec: 48 stories, 5 dimensions, experts 1..3 with
/// biases +1.5, −1.5, 0.
SyntheticSpec default_synthetic_spec();
void validate(const SyntheticSpec& spec);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
/// Throws SpecInvalid naming the offending field.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct GroundTruth {
  std::string story_id;
  Dimension dimension = Dimension::OriginalityInThought;
  int expert_id = 0;
  std::vector<double> latent;
  double item_evidence = 0.0;   // f_d(x)
  double annotator_bias = 0.0;  // b_a(x)
  double log_odds = 0.0;        // (f + b) / T
  double probability_yes = 0.0;
  int positive_cues = 0;
  int negative_cues = 0;
  double woe_increment = 0.0;  // cue_woe · (positive − negative)
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<GroundTruth> truth;  // aligned with corpus.examples()
};

SyntheticCorpus generate_corpus(const SyntheticSpec& spec);

/// Adds an annotator with uniform-random verdicts and generic explanations
/// for every (story, dimension) pair present. Throws IdCollision.
Corpus inject_noise_annotator(const Corpus& corpus, const AnnotatorProfile& profile, std::uint64_t seed);

std::string ground_truth_jsonl(std::span<const GroundTruth> truth);

struct ControlVariateReport {
  double rho = 0.0;
  double alpha_star = 0.0;
  double var_z = 0.0;
  double var_adjusted = 0.0;
  double ratio = 0.0;
};

/// Var(Z − α*(C − mean C)) against Var(Z). Throws DegenerateControl when
/// Var(C) = 0.
ControlVariateReport control_variate_check(std::span<const double> z, std::span<const double> c);

struct WeightOfEvidenceReport {
  double pearson = 0.0;
  bool undefined = false;
  std::size_t n = 0;
  double mean_score = 0.0;
};

/// Trains the ICM on one fold of a generated corpus and correlates held-out
/// curiosity scores with the true log-odds increment of each explanation.
WeightOfEvidenceReport weight_of_evidence_check(const SyntheticSpec& spec, const EncoderConfig& encoder,
                                                const ICMConfig& icm, std::uint64_t seed);

/// The embedded lexicon file.
const nlohmann::json& lexicons();

}  // namespace curio
