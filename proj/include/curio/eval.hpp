#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace curio {

/// A metric value with the undefined flag (constant input, zero
/// denominator). Undefined metrics carry value 0.
struct MetricValue {
  double value = 0.0;
  bool undefined = false;
};

MetricValue pearson(std::span<const double> x, std::span<const double> y);
/// Pearson over average ranks (ties share the mean rank).
MetricValue spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> average_ranks(std::span<const double> x);

struct ConfusionMatrix {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
  [[nodiscard]] long total() const noexcept { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Labels are 0/1 with 1 (yes) as the positive class.
ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth);
MetricValue cohen_kappa(std::span<const int> pred, std::span<const int> truth);
MetricValue cohen_kappa(const ConfusionMatrix& c);

struct PrecisionRecallF1 {
  MetricValue precision;
  MetricValue recall;
  MetricValue f1;
};
PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& c);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// Two-sided p-value of Student t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct PairedTest {
  std::string metric;
  double mean_delta = 0.0;
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  bool significant = false;  // p < 0.05
  bool undefined = false;    // zero-variance differences
};

/// Two-sided paired t-test on a − b.
PairedTest paired_t_test(std::span<const double> a, std::span<const double> b);

inline constexpr std::array<std::string_view, 6> kMetricNames{"pearson", "spearman", "kappa",
                                                              "precision", "recall", "f1"};

struct FoldMetrics {
  std::map<std::string, MetricValue> values;  // keyed by kMetricNames
  ConfusionMatrix confusion;
  std::size_t n = 0;

  [[nodiscard]] double get(std::string_view metric) const;
  [[nodiscard]] bool undefined(std::string_view metric) const;
};

/// Pearson and κ on 0/1 verdicts, Spearman between prob_yes and truth.
FoldMetrics evaluate(std::span<const int> pred, std::span<const double> prob_yes, std::span<const int> truth);

struct AggregateCell {
  double mean = 0.0;
  double sd = 0.0;
  bool sd_undefined = false;  // k = 1
  int flagged_folds = 0;      // folds where the metric was undefined
};

struct MetricsReport {
  std::vector<FoldMetrics> per_fold;
  std::map<std::string, AggregateCell> aggregate;
};

/// Mean and sample SD (n − 1) per metric.
MetricsReport aggregate(std::vector<FoldMetrics> per_fold);

/// "0.524 ±0.092".
std::string format_mean_sd(double mean, double sd);
std::string format_cell(const AggregateCell& cell);

/// ICM vs baseline paired tests per metric over aligned folds.
std::vector<PairedTest> compare_reports(const MetricsReport& a, const MetricsReport& b);

/// Per-annotator metrics over pooled predictions.
std::map<int, FoldMetrics> evaluate_by_annotator(std::span<const int> annotator, std::span<const int> pred,
                                                 std::span<const double> prob_yes, std::span<const int> truth);

struct CuriosityHistogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<long> match;
  std::vector<long> mismatch;
  double match_mean_abs = 0.0;
  double mismatch_mean_abs = 0.0;
  long n_match = 0;
  long n_mismatch = 0;
};

/// Partitions scores by whether the base prediction matches the truth.
CuriosityHistogram curiosity_histogram(std::span<const double> scores, std::span<const int> base_pred,
                                       std::span<const int> truth, int bins = 20);
std::string histogram_csv(const CuriosityHistogram& h, const std::string& config_hash);
std::string histogram_svg(const CuriosityHistogram& h);

}  // namespace curio
