#include "curio/report.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "curio/config.hpp"
#include "curio/errors.hpp"
#include "curio/eval.hpp"

namespace curio {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::MalformedRecord, "expected a number, got '" + s + "'");
  }
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct RunArtifacts {
  json manifest;
  std::string hash;
  std::map<std::string, CsvTable> tables;  // by file name
};

RunArtifacts load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingArtifacts, dir.string() + " is not a directory");
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorCode::MissingArtifacts, dir.string() + " holds no manifest.json");
  }
  RunArtifacts run;
  try {
    run.manifest = json::parse(read_file(dir / "manifest.json"));
    run.hash = run.manifest.at("config_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, "manifest.json: " + std::string(e.what()));
  }
  const auto kind = run.manifest.value("kind", std::string{});
  const std::vector<std::string> required =
      kind == "ablation" ? std::vector<std::string>{"ablation.csv"} : std::vector<std::string>{"metrics.csv"};
  for (const auto& name : required) {
    if (!fs::exists(dir / name)) throw Error(ErrorCode::MissingArtifacts, dir.string() + " lacks " + name);
  }
  for (const auto* name : {"metrics.csv", "significance.csv", "per_annotator.csv", "curiosity_hist.csv",
                           "ablation.csv"}) {
    if (!fs::exists(dir / name)) continue;
    auto table = parse_csv(read_file(dir / name));
    for (const auto& row : table.rows) {
      const auto it = row.find("config_hash");
      if (it == row.end() || it->second != run.hash) {
        throw Error(ErrorCode::ConfigMismatch, std::string(name) + " in " + dir.string() +
                                                   " carries a config hash other than the manifest's " + run.hash);
      }
    }
    run.tables.emplace(name, std::move(table));
  }
  if (fs::exists(dir / "curiosity.jsonl")) {
    std::istringstream in(read_file(dir / "curiosity.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || j.value("config_hash", std::string{}) != run.hash) {
        throw Error(ErrorCode::ConfigMismatch, "curiosity.jsonl in " + dir.string() + " mixes config hashes");
      }
    }
  }
  return run;
}

struct AggregateRow {
  std::map<std::string, double> mean;
  std::map<std::string, double> sd;
  std::string flags;
  std::string n;
};

std::map<std::string, AggregateRow> aggregates(const CsvTable& metrics) {
  std::map<std::string, AggregateRow> out;
  for (const auto& row : metrics.rows) {
    if (row.at("seed") != "all") continue;
    auto& agg = out[row.at("model")];
    const bool is_mean = row.at("fold") == "mean";
    for (const auto name : kMetricNames) {
      const auto v = to_double(row.at(std::string(name)));
      (is_mean ? agg.mean : agg.sd)[std::string(name)] = v;
    }
    if (is_mean) {
      agg.flags = row.at("undefined");
      agg.n = row.at("n");
    }
  }
  return out;
}

std::string model_label(const std::string& model) {
  if (model == "icm") return "ICM judge";
  if (model == "icm_expert_prior") return "ICM judge (expert prior)";
  if (model == "baseline") return "Baseline (no explanations)";
  return model;
}

std::string render_metrics_section(const RunArtifacts& run) {
  std::ostringstream md;
  const auto agg = aggregates(run.tables.at("metrics.csv"));
  md << "## Aggregate metrics (mean ±SD over " << (agg.empty() ? "0" : agg.begin()->second.n) << " folds)\n\n";
  md << "| Model |";
  for (const auto name : kMetricNames) md << ' ' << name << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& [model, row] : agg) {
    md << "| " << model_label(model) << " |";
    std::set<std::string> flagged;
    std::istringstream fs_(row.flags);
    std::string f;
    while (std::getline(fs_, f, ';')) flagged.insert(f);
    for (const auto name : kMetricNames) {
      md << ' ' << format_mean_sd(row.mean.at(std::string(name)), row.sd.at(std::string(name)))
         << (flagged.contains(std::string(name)) ? "*" : "") << " |";
    }
    md << '\n';
  }
  md << "\nCells marked * include folds where the metric was undefined and reported as 0.\n\n";

  if (run.tables.contains("significance.csv") && !run.tables.at("significance.csv").rows.empty()) {
    md << "## ICM judge vs baseline (paired t-test over folds)\n\n";
    md << "| Metric | mean Δ | t | df | p | significant |\n|---|---|---|---|---|---|\n";
    for (const auto& row : run.tables.at("significance.csv").rows) {
      const bool undefined = row.at("undefined") == "yes";
      md << "| " << row.at("metric") << " | " << fixed3(to_double(row.at("mean_delta"))) << " | "
         << (undefined ? "n/a" : fixed3(to_double(row.at("t")))) << " | " << row.at("df") << " | "
         << (undefined ? "undefined" : fixed3(to_double(row.at("p")))) << " | " << row.at("significant") << " |\n";
    }
    md << '\n';
  }

  if (run.tables.contains("per_annotator.csv") && !run.tables.at("per_annotator.csv").rows.empty()) {
    md << "## Per-annotator breakdown (pooled over folds)\n\n";
    md << "| Model | Annotator | n | pearson | kappa | f1 |\n|---|---|---|---|---|---|\n";
    for (const auto& row : run.tables.at("per_annotator.csv").rows) {
      md << "| " << model_label(row.at("model")) << " | " << row.at("annotator") << " | " << row.at("n") << " | "
         << fixed3(to_double(row.at("pearson"))) << " | " << fixed3(to_double(row.at("kappa"))) << " | "
         << fixed3(to_double(row.at("f1"))) << " |\n";
    }
    md << '\n';
  }

  if (run.tables.contains("curiosity_hist.csv")) {
    long match = 0;
    long mismatch = 0;
    for (const auto& row : run.tables.at("curiosity_hist.csv").rows) {
      match += std::stol(row.at("match"));
      mismatch += std::stol(row.at("mismatch"));
    }
    md << "## Curiosity scores\n\n";
    md << "Base-prediction matches: " << match << ", mismatches: " << mismatch
       << ". See `curiosity_hist.svg` and `curiosity_hist.csv`.\n\n";
  }
  md << "![metrics](metrics_bars.svg)\n";
  return md.str();
}

std::string metrics_svg(const RunArtifacts& run) {
  const auto agg = aggregates(run.tables.at("metrics.csv"));
  std::vector<std::string> groups(kMetricNames.begin(), kMetricNames.end());
  std::vector<std::string> series;
  for (const auto& [model, _] : agg) series.push_back(model_label(model));
  std::vector<std::vector<double>> values;
  for (const auto name : kMetricNames) {
    std::vector<double> v;
    for (const auto& [model, row] : agg) v.push_back(row.mean.at(std::string(name)));
    values.push_back(std::move(v));
  }
  return grouped_bar_svg("Mean metrics by model", groups, series, values);
}

std::string render_ablation_section(const RunArtifacts& run) {
  std::ostringstream md;
  md << "## Inverse-model ablation\n\n";
  md << "| Method | Annotation | λ | F1 | Pearson | κ | noise attribution | attribution accuracy |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : run.tables.at("ablation.csv").rows) {
    md << "| " << row.at("method") << " | " << row.at("annotation") << " | " << fixed3(to_double(row.at("lambda")))
       << " | " << format_mean_sd(to_double(row.at("f1_mean")), to_double(row.at("f1_sd"))) << " | "
       << format_mean_sd(to_double(row.at("pearson_mean")), to_double(row.at("pearson_sd"))) << " | "
       << format_mean_sd(to_double(row.at("kappa_mean")), to_double(row.at("kappa_sd"))) << " | "
       << fixed3(to_double(row.at("noise_attribution"))) << " | "
       << fixed3(to_double(row.at("attribution_accuracy"))) << " |\n";
  }
  md << "\nMetrics are computed on expert annotations only.\n";
  return md.str();
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return t;
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != t.header.size()) {
      throw Error(ErrorCode::MalformedRecord, "csv line " + std::to_string(lineno) + ": expected " +
                                                  std::to_string(t.header.size()) + " fields");
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < fields.size(); ++i) row[t.header[i]] = fields[i];
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string render_report(const fs::path& run_dir) {
  const auto run = load_run(run_dir);
  const auto kind = run.manifest.value("kind", std::string("crossval"));
  std::ostringstream md;
  md << "# Run report\n\n";
  md << "- kind: " << kind << "\n- config hash: `" << run.hash << "`\n";
  if (run.manifest.contains("config")) {
    const auto& c = run.manifest.at("config");
    if (c.contains("seeds")) md << "- seeds: " << c.at("seeds").dump() << '\n';
    if (kind == "ood" && c.contains("split")) {
      md << "- held-out dimension: " << c.at("split").value("heldout", std::string{}) << '\n';
    }
  }
  md << '\n';
  if (kind == "ablation") {
    md << render_ablation_section(run);
  } else {
    md << render_metrics_section(run);
  }
  return md.str();
}

void write_report(const fs::path& run_dir) {
  const auto md = render_report(run_dir);
  write_file(run_dir / "report.md", md);
  const auto run = load_run(run_dir);
  if (run.tables.contains("metrics.csv")) write_file(run_dir / "metrics_bars.svg", metrics_svg(run));
}

std::string render_id_ood_svg(const fs::path& id_dir, const fs::path& ood_dir) {
  const auto id = load_run(id_dir);
  const auto ood = load_run(ood_dir);
  if (id.hash != ood.hash) {
    throw Error(ErrorCode::ConfigMismatch, "ID run " + id.hash + " and OOD run " + ood.hash + " use different configs");
  }
  const auto a = aggregates(id.tables.at("metrics.csv"));
  const auto b = aggregates(ood.tables.at("metrics.csv"));
  std::vector<std::string> groups(kMetricNames.begin(), kMetricNames.end());
  std::vector<std::string> series;
  std::vector<std::vector<double>> values(kMetricNames.size());
  for (const auto* model : {"icm", "baseline"}) {
    if (!a.contains(model) || !b.contains(model)) continue;
    series.push_back(model_label(model) + " ID");
    series.push_back(model_label(model) + " OOD");
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
      values[m].push_back(a.at(model).mean.at(std::string(kMetricNames[m])));
      values[m].push_back(b.at(model).mean.at(std::string(kMetricNames[m])));
    }
  }
  return grouped_bar_svg("In-distribution vs out-of-distribution", groups, series, values);
}

std::string grouped_bar_svg(const std::string& title, const std::vector<std::string>& groups,
                            const std::vector<std::string>& series, const std::vector<std::vector<double>>& values) {
  static const std::vector<std::string> kColors{"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  constexpr double kWidth = 720.0;
  constexpr double kHeight = 360.0;
  constexpr double kLeft = 50.0;
  constexpr double kRight = 20.0;
  constexpr double kTop = 50.0;
  constexpr double kBottom = 50.0;
  double lo = 0.0;
  double hi = 1.0;
  for (const auto& g : values) {
    for (double v : g) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double plot_h = kHeight - kTop - kBottom;
  const double plot_w = kWidth - kLeft - kRight;
  auto y_of = [&](double v) { return kTop + plot_h * (hi - v) / (hi - lo); };
  std::ostringstream os;
  os.precision(6);
  os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << '\n';
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kWidth << R"(" height=")" << kHeight << R"(">)"
     << '\n';
  os << "<title>" << xml_escape(title) << "</title>\n";
  os << R"(<text x=")" << kLeft << R"(" y="20" font-size="14">)" << xml_escape(title) << "</text>\n";
  os << R"(<line x1=")" << kLeft << R"(" y1=")" << y_of(0.0) << R"(" x2=")" << kWidth - kRight << R"(" y2=")"
     << y_of(0.0) << R"(" stroke="black"/>)" << '\n';
  const double gw = groups.empty() ? plot_w : plot_w / static_cast<double>(groups.size());
  const double bw = series.empty() ? 0.0 : gw * 0.8 / static_cast<double>(series.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = kLeft + gw * static_cast<double>(g);
    for (std::size_t s = 0; s < series.size() && s < values[g].size(); ++s) {
      const double v = values[g][s];
      const double y = std::min(y_of(v), y_of(0.0));
      const double h = std::abs(y_of(v) - y_of(0.0));
      os << R"(<rect x=")" << gx + gw * 0.1 + bw * static_cast<double>(s) << R"(" y=")" << y << R"(" width=")" << bw
         << R"(" height=")" << h << R"(" fill=")" << kColors[s % kColors.size()] << R"("/>)" << '\n';
    }
    os << R"(<text x=")" << gx + gw * 0.1 << R"(" y=")" << kHeight - kBottom + 20 << R"(" font-size="11">)"
       << xml_escape(groups[g]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double x = kLeft + 170.0 * static_cast<double>(s % 4);
    const double y = 36.0;
    os << R"(<rect x=")" << x << R"(" y=")" << y - 9 << R"(" width="10" height="10" fill=")"
       << kColors[s % kColors.size()] << R"("/>)" << '\n';
    os << R"(<text x=")" << x + 14 << R"(" y=")" << y << R"(" font-size="11">)" << xml_escape(series[s])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace curio
