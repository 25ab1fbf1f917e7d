#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace curio {

/// Rows of a comma-separated file with a header line; fields are unquoted.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
};

CsvTable parse_csv(const std::string& text);

/// Renders report.md and metrics_bars.svg from the artifacts in run_dir.
/// Throws MissingArtifacts when the directory holds no run artifacts and
/// ConfigMismatch when artifacts carry different config hashes.
void write_report(const std::filesystem::path& run_dir);
std::string render_report(const std::filesystem::path& run_dir);

/// Grouped bar chart of the ICM and baseline means, ID next to OOD.
/// Both runs must share a config hash.
std::string render_id_ood_svg(const std::filesystem::path& id_dir, const std::filesystem::path& ood_dir);

/// Minimal grouped bar chart: one group per label, one bar per series.
std::string grouped_bar_svg(const std::string& title, const std::vector<std::string>& groups,
                            const std::vector<std::string>& series, const std::vector<std::vector<double>>& values);

}  // namespace curio
