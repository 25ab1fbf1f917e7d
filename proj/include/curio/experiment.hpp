#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/config.hpp"
#include "curio/eval.hpp"

namespace curio {

/// Model keys used in metrics tables.
inline constexpr std::string_view kModelIcm = "icm";
inline constexpr std::string_view kModelIcmPrior = "icm_expert_prior";
inline constexpr std::string_view kModelBaseline = "baseline";

using ProgressFn = std::function<void(const std::string&)>;

struct ModelPredictions {
  std::vector<int> pred;
  std::vector<double> prob_yes;
  std::vector<double> curiosity;  // empty for the baseline
  std::string mode;               // "explanation", "expert-prior" or "baseline"
};

struct FoldOutcome {
  std::uint64_t seed = 0;
  int fold = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::string train_keys_hash;  // identity of the examples whose explanations were used
  std::vector<std::size_t> test_indices;
  std::vector<std::string> test_story_ids;
  std::vector<Dimension> test_dimensions;
  std::vector<int> truth;
  std::vector<int> annotator;
  std::map<std::string, ModelPredictions> predictions;
  std::map<std::string, FoldMetrics> metrics;
  std::vector<CuriosityRecord> test_records;
  std::vector<int> base_pred;  // thresholded state-A logit
  std::map<std::string, std::string> checkpoint_hashes;
  std::map<int, double> attribution_recall;  // held-out, per annotator
  double attribution_accuracy = 0.0;
  std::vector<EpochLog> icm_log;
};

struct ExperimentResult {
  std::string kind;  // "crossval" or "ood"
  RunConfig config;
  std::string config_hash;
  std::vector<FoldOutcome> folds;
  std::map<std::string, MetricsReport> reports;
  std::vector<PairedTest> significance;  // icm vs baseline over all folds
  CuriosityHistogram histogram;
  /// Predictions pooled over folds, per model, broken down by annotator.
  std::map<std::string, std::map<int, FoldMetrics>> per_annotator;
};

/// Trains and evaluates every model on one train/test split.
FoldOutcome run_split(const RunConfig& config, const Corpus& corpus, const CorpusFeatures& features,
                      std::span<const std::size_t> train, std::span<const std::size_t> test, std::uint64_t seed,
                      int fold, const std::filesystem::path& checkpoint_dir = {});

ExperimentResult run_crossval(const RunConfig& config, const Corpus& corpus, const ProgressFn& progress = {});
ExperimentResult run_ood(const RunConfig& config, const Corpus& corpus, const ProgressFn& progress = {});

/// Writes metrics.csv, significance.csv, per_annotator.csv, curiosity.jsonl,
/// predictions.jsonl, curiosity_hist.{csv,svg}, manifest.json and report.md.
void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir);

struct AblationRow {
  std::string method;      // "ICM" or "ICM w/o inverse"
  std::string annotation;  // "experts" or "experts + noise"
  double lambda = 1.0;
  bool with_noise = false;
  AggregateCell f1;
  AggregateCell pearson;
  AggregateCell kappa;
  double noise_attribution = 0.0;  // held-out recall of the noise class
  double attribution_accuracy = 0.0;
  std::vector<double> fold_f1;
};

struct AblationResult {
  RunConfig config;
  std::string config_hash;
  std::vector<AblationRow> rows;  // four rows: method × annotation
};

/// λ = 1 vs λ = 0, each with and without an injected noise annotator.
/// Metrics are computed on expert annotations only.
AblationResult run_ablation(const RunConfig& config, const Corpus& corpus, bool include_clean, bool include_noise,
                            const ProgressFn& progress = {});
void write_ablation(const AblationResult& result, const std::filesystem::path& dir);

}  // namespace curio
