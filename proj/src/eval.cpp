#include "curio/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "curio/errors.hpp"

namespace curio {

namespace {

void require_same_length(std::size_t a, std::size_t b, std::size_t min_len, const char* what) {
  if (a != b) throw Error(ErrorCode::InvalidConfig, std::string(what) + ": sequences differ in length");
  if (a < min_len) {
    throw Error(ErrorCode::InvalidConfig,
                std::string(what) + ": needs at least " + std::to_string(min_len) + " observations");
  }
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

MetricValue pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), 2, "pearson");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

MetricValue spearman(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), 2, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth) {
  require_same_length(pred.size(), truth.size(), 0, "confusion");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool t = truth[i] != 0;
    if (p && t) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (t) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

MetricValue cohen_kappa(const ConfusionMatrix& c) {
  const auto n = static_cast<double>(c.total());
  if (n == 0) return {0.0, true};
  const double po = static_cast<double>(c.tp + c.tn) / n;
  const double pred_yes = static_cast<double>(c.tp + c.fp) / n;
  const double true_yes = static_cast<double>(c.tp + c.fn) / n;
  const double pe = pred_yes * true_yes + (1.0 - pred_yes) * (1.0 - true_yes);
  if (pe >= 1.0) return {0.0, true};
  return {(po - pe) / (1.0 - pe), false};
}

MetricValue cohen_kappa(std::span<const int> pred, std::span<const int> truth) {
  require_same_length(pred.size(), truth.size(), 1, "cohen_kappa");
  return cohen_kappa(confusion(pred, truth));
}

PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& c) {
  PrecisionRecallF1 r;
  if (c.tp + c.fp > 0) {
    r.precision = {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp), false};
  } else {
    r.precision = {0.0, true};
  }
  if (c.tp + c.fn > 0) {
    r.recall = {static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn), false};
  } else {
    r.recall = {0.0, true};
  }
  const double denom = r.precision.value + r.recall.value;
  if (denom > 0.0) {
    r.f1 = {2.0 * r.precision.value * r.recall.value / denom, false};
  } else {
    r.f1 = {0.0, true};
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), 2, "paired_t_test");
  const std::size_t k = a.size();
  std::vector<double> d(k);
  for (std::size_t i = 0; i < k; ++i) d[i] = a[i] - b[i];
  PairedTest r;
  r.df = static_cast<int>(k) - 1;
  r.mean_delta = mean_of(d);
  double ss = 0.0;
  for (double v : d) ss += (v - r.mean_delta) * (v - r.mean_delta);
  const double sd = std::sqrt(ss / static_cast<double>(k - 1));
  if (!(sd > 0.0)) {
    r.undefined = true;
    r.t = 0.0;
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = r.mean_delta / (sd / std::sqrt(static_cast<double>(k)));
  r.p = student_t_two_sided_p(r.t, r.df);
  r.significant = r.p < 0.05;
  return r;
}

// ---------------------------------------------------------------------------

double FoldMetrics::get(std::string_view metric) const { return values.at(std::string(metric)).value; }
bool FoldMetrics::undefined(std::string_view metric) const { return values.at(std::string(metric)).undefined; }

FoldMetrics evaluate(std::span<const int> pred, std::span<const double> prob_yes, std::span<const int> truth) {
  require_same_length(pred.size(), truth.size(), 1, "evaluate");
  require_same_length(prob_yes.size(), truth.size(), 1, "evaluate");
  FoldMetrics m;
  m.n = pred.size();
  m.confusion = confusion(pred, truth);
  std::vector<double> p(pred.begin(), pred.end());
  std::vector<double> t(truth.begin(), truth.end());
  if (m.n >= 2) {
    m.values["pearson"] = pearson(p, t);
    m.values["spearman"] = spearman(prob_yes, t);
  } else {
    m.values["pearson"] = {0.0, true};
    m.values["spearman"] = {0.0, true};
  }
  m.values["kappa"] = cohen_kappa(m.confusion);
  const auto prf = precision_recall_f1(m.confusion);
  m.values["precision"] = prf.precision;
  m.values["recall"] = prf.recall;
  m.values["f1"] = prf.f1;
  return m;
}

MetricsReport aggregate(std::vector<FoldMetrics> per_fold) {
  if (per_fold.empty()) throw Error(ErrorCode::InvalidConfig, "aggregate needs at least one fold");
  MetricsReport r;
  r.per_fold = std::move(per_fold);
  const auto k = static_cast<double>(r.per_fold.size());
  for (const auto name : kMetricNames) {
    AggregateCell cell;
    double sum = 0.0;
    for (const auto& f : r.per_fold) {
      sum += f.get(name);
      if (f.undefined(name)) ++cell.flagged_folds;
    }
    cell.mean = sum / k;
    if (r.per_fold.size() < 2) {
      cell.sd_undefined = true;
    } else {
      double ss = 0.0;
      for (const auto& f : r.per_fold) ss += (f.get(name) - cell.mean) * (f.get(name) - cell.mean);
      cell.sd = std::sqrt(ss / (k - 1.0));
    }
    r.aggregate[std::string(name)] = cell;
  }
  return r;
}

std::string format_mean_sd(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ±%.3f", mean, sd);
  return buf;
}

std::string format_cell(const AggregateCell& cell) {
  auto s = format_mean_sd(cell.mean, cell.sd);
  if (cell.flagged_folds > 0 || cell.sd_undefined) s += "*";
  return s;
}

std::vector<PairedTest> compare_reports(const MetricsReport& a, const MetricsReport& b) {
  if (a.per_fold.size() != b.per_fold.size()) {
    throw Error(ErrorCode::InvalidConfig, "compare_reports: fold counts differ");
  }
  std::vector<PairedTest> out;
  for (const auto name : kMetricNames) {
    std::vector<double> xa;
    std::vector<double> xb;
    for (const auto& f : a.per_fold) xa.push_back(f.get(name));
    for (const auto& f : b.per_fold) xb.push_back(f.get(name));
    PairedTest t;
    if (xa.size() >= 2) {
      t = paired_t_test(xa, xb);
    } else {
      t.undefined = true;
      t.p = std::numeric_limits<double>::quiet_NaN();
      t.mean_delta = xa.empty() ? 0.0 : xa[0] - xb[0];
    }
    t.metric = std::string(name);
    out.push_back(t);
  }
  return out;
}

std::map<int, FoldMetrics> evaluate_by_annotator(std::span<const int> annotator, std::span<const int> pred,
                                                 std::span<const double> prob_yes, std::span<const int> truth) {
  require_same_length(annotator.size(), pred.size(), 0, "evaluate_by_annotator");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < annotator.size(); ++i) groups[annotator[i]].push_back(i);
  std::map<int, FoldMetrics> out;
  for (const auto& [id, idx] : groups) {
    std::vector<int> p;
    std::vector<double> q;
    std::vector<int> t;
    for (const auto i : idx) {
      p.push_back(pred[i]);
      q.push_back(prob_yes[i]);
      t.push_back(truth[i]);
    }
    out.emplace(id, evaluate(p, q, t));
  }
  return out;
}

// ---------------------------------------------------------------------------

CuriosityHistogram curiosity_histogram(std::span<const double> scores, std::span<const int> base_pred,
                                       std::span<const int> truth, int bins) {
  require_same_length(scores.size(), base_pred.size(), 0, "curiosity_histogram");
  require_same_length(scores.size(), truth.size(), 0, "curiosity_histogram");
  if (bins < 1) throw Error(ErrorCode::InvalidConfig, "curiosity_histogram: bins must be >= 1");
  CuriosityHistogram h;
  if (scores.empty()) return h;
  double lo = *std::min_element(scores.begin(), scores.end());
  double hi = *std::max_element(scores.begin(), scores.end());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto nb = static_cast<std::size_t>(bins);
  h.edges.resize(nb + 1);
  for (std::size_t b = 0; b <= nb; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(nb);
  h.match.assign(nb, 0);
  h.mismatch.assign(nb, 0);
  double sum_match = 0.0;
  double sum_mismatch = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto b = static_cast<std::size_t>((scores[i] - lo) / (hi - lo) * static_cast<double>(nb));
    b = std::min(b, nb - 1);
    if ((base_pred[i] != 0) == (truth[i] != 0)) {
      ++h.match[b];
      ++h.n_match;
      sum_match += std::abs(scores[i]);
    } else {
      ++h.mismatch[b];
      ++h.n_mismatch;
      sum_mismatch += std::abs(scores[i]);
    }
  }
  if (h.n_match > 0) h.match_mean_abs = sum_match / static_cast<double>(h.n_match);
  if (h.n_mismatch > 0) h.mismatch_mean_abs = sum_mismatch / static_cast<double>(h.n_mismatch);
  return h;
}

std::string histogram_csv(const CuriosityHistogram& h, const std::string& config_hash) {
  std::ostringstream os;
  os.precision(10);
  os << "bin_lo,bin_hi,match,mismatch,config_hash\n";
  for (std::size_t b = 0; b < h.match.size(); ++b) {
    os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.match[b] << ',' << h.mismatch[b] << ',' << config_hash
       << '\n';
  }
  return os.str();
}

std::string histogram_svg(const CuriosityHistogram& h) {
  constexpr double kWidth = 640.0;
  constexpr double kHeight = 320.0;
  constexpr double kMargin = 40.0;
  std::ostringstream os;
  os.precision(6);
  os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << '\n'
     << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kWidth << R"(" height=")" << kHeight << R"(">)"
     << '\n'
     << R"(<title>Curiosity score: match vs mismatch</title>)" << '\n';
  const std::size_t nb = h.match.size();
  long peak = 1;
  for (std::size_t b = 0; b < nb; ++b) peak = std::max({peak, h.match[b], h.mismatch[b]});
  const double plot_w = kWidth - 2 * kMargin;
  const double plot_h = kHeight - 2 * kMargin;
  os << R"(<line x1=")" << kMargin << R"(" y1=")" << kHeight - kMargin << R"(" x2=")" << kWidth - kMargin
     << R"(" y2=")" << kHeight - kMargin << R"(" stroke="black"/>)" << '\n';
  if (nb > 0) {
    const double bw = plot_w / static_cast<double>(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      const double x = kMargin + bw * static_cast<double>(b);
      const double hm = plot_h * static_cast<double>(h.match[b]) / static_cast<double>(peak);
      const double hx = plot_h * static_cast<double>(h.mismatch[b]) / static_cast<double>(peak);
      os << R"(<rect x=")" << x << R"(" y=")" << kHeight - kMargin - hm << R"(" width=")" << bw / 2
         << R"(" height=")" << hm << R"(" fill="#4c72b0"/>)" << '\n';
      os << R"(<rect x=")" << x + bw / 2 << R"(" y=")" << kHeight - kMargin - hx << R"(" width=")" << bw / 2
         << R"(" height=")" << hx << R"(" fill="#dd8452"/>)" << '\n';
    }
    os << R"(<text x=")" << kMargin << R"(" y=")" << kHeight - 10 << R"(" font-size="12">)" << h.edges.front()
       << "</text>\n";
    os << R"(<text x=")" << kWidth - kMargin - 40 << R"(" y=")" << kHeight - 10 << R"(" font-size="12">)"
       << h.edges.back() << "</text>\n";
  }
  os << R"(<text x=")" << kMargin << R"(" y="20" font-size="12" fill="#4c72b0">match (n=)" << h.n_match
     << ")</text>\n";
  os << R"(<text x=")" << kMargin + 160 << R"(" y="20" font-size="12" fill="#dd8452">mismatch (n=)" << h.n_mismatch
     << ")</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace curio
