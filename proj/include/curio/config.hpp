#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/data_model.hpp"
#include "curio/encoder.hpp"
#include "curio/icm.hpp"
#include "curio/judge.hpp"
#include "curio/synth.hpp"

namespace curio {

enum class RunMode { Both, Icm, Baseline };

struct SplitConfig {
  int k = 5;
  SplitUnit unit = SplitUnit::Group;
  Dimension heldout = Dimension::OriginalityInThought;  // OOD runs
  bool operator==(const SplitConfig&) const = default;
};

struct RunConfig {
  // Corpus JSONL path. When empty the synthetic spec generates the corpus.
  std::string corpus;
  SyntheticSpec synthetic = default_synthetic_spec();
  RunMode mode = RunMode::Both;
  EncoderConfig encoder;
  ICMConfig icm;
  JudgeConfig judge;  // judge.encoder mirrors encoder
  SplitConfig split;
  InferenceMode inference = InferenceMode::ExplanationAvailable;
  std::vector<std::uint64_t> seeds{42};
  AnnotatorProfile noise_annotator{4, 0.0, {}, {}, true};
  // Not part of the config hash.
  std::string output_dir = "runs/default";
  bool save_checkpoints = false;
};

void validate(const RunConfig& config);
nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a of the canonical JSON of every field that influences results.
std::string config_hash(const RunConfig& config);

std::string_view run_mode_name(RunMode mode) noexcept;

/// Loads the configured corpus, or generates it from the synthetic spec.
Corpus load_or_generate_corpus(const RunConfig& config);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace curio
