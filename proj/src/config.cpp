#include "curio/config.hpp"
#include "json_field.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "curio/hash.hpp"

namespace curio {

using json = nlohmann::json;

std::string_view run_mode_name(RunMode mode) noexcept {
  switch (mode) {
    case RunMode::Both:
      return "both";
    case RunMode::Icm:
      return "icm";
    case RunMode::Baseline:
      return "baseline";
  }
  return "both";
}

void validate(const RunConfig& c) {
  validate(c.icm);
  validate(c.judge);
  if (c.judge.encoder.features != c.encoder.features) {
    throw Error(ErrorCode::InvalidConfig, "judge and ICM must share the featurizer");
  }
  if (c.split.k < 2) throw Error(ErrorCode::InvalidConfig, "split.k must be >= 2");
  if (c.seeds.empty()) throw Error(ErrorCode::InvalidConfig, "seeds must list at least one seed");
  if (c.corpus.empty()) validate(c.synthetic);
  if (!c.noise_annotator.noise || is_expert_id(c.noise_annotator.annotator_id)) {
    throw Error(ErrorCode::InvalidConfig, "noise_annotator must be a noise profile with an id outside {1,2,3}");
  }
}

namespace {

json hashed_fields(const RunConfig& c) {
  json j;
  j["corpus"] = c.corpus;
  if (c.corpus.empty()) j["synthetic"] = synthetic_spec_to_json(c.synthetic);
  j["mode"] = run_mode_name(c.mode);
  j["encoder"] = encoder_config_to_json(c.encoder);
  j["icm"] = icm_config_to_json(c.icm);
  j["judge"] = judge_config_to_json(c.judge);
  j["split"] = {{"k", c.split.k},
                {"unit", c.split.unit == SplitUnit::Group ? "group" : "example"},
                {"heldout", dimension_name(c.split.heldout)}};
  j["inference"] = inference_mode_name(c.inference);
  j["seeds"] = c.seeds;
  j["noise_annotator"] = {{"annotator_id", c.noise_annotator.annotator_id}};
  return j;
}

}  // namespace

json run_config_to_json(const RunConfig& c) {
  auto j = hashed_fields(c);
  j["output_dir"] = c.output_dir;
  j["save_checkpoints"] = c.save_checkpoints;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "run config must be a JSON object");
  static const std::set<std::string> known{"corpus", "synthetic", "mode",  "encoder",         "icm",
                                           "judge",  "split",     "inference", "seeds", "noise_annotator",
                                           "output_dir", "save_checkpoints"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::InvalidConfig, "config: unknown field '" + key + "'");
  }
  RunConfig c;
  try {
    c.corpus = j.value("corpus", std::string{});
    if (j.contains("synthetic")) c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
    const auto mode = j.value("mode", std::string("both"));
    if (mode == "both") {
      c.mode = RunMode::Both;
    } else if (mode == "icm") {
      c.mode = RunMode::Icm;
    } else if (mode == "baseline") {
      c.mode = RunMode::Baseline;
    } else {
      throw Error(ErrorCode::InvalidConfig, "mode must be both, icm or baseline");
    }
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    if (j.contains("icm")) c.icm = icm_config_from_json(j.at("icm"));
    c.judge.encoder = c.encoder;
    if (j.contains("judge")) {
      auto jj = j.at("judge");
      if (!jj.contains("encoder")) jj["encoder"] = encoder_config_to_json(c.encoder);
      c.judge = judge_config_from_json(jj);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::reject_unknown(s, {{"k", 0}, {"unit", 0}, {"heldout", 0}}, ErrorCode::InvalidConfig, "split");
      detail::read_field(s, "k", c.split.k, ErrorCode::InvalidConfig, "split");
      const auto unit = s.value("unit", std::string("group"));
      if (unit != "group" && unit != "example") throw Error(ErrorCode::InvalidConfig, "split.unit must be group or example");
      c.split.unit = unit == "group" ? SplitUnit::Group : SplitUnit::Example;
      if (s.contains("heldout")) c.split.heldout = parse_dimension(s.at("heldout").get<std::string>());
    }
    if (j.contains("inference")) c.inference = parse_inference_mode(j.at("inference").get<std::string>());
    if (j.contains("seeds")) {
      const auto& seeds = j.at("seeds");
      if (!seeds.is_array()) throw Error(ErrorCode::InvalidConfig, "seeds: must be an array of non-negative integers");
      c.seeds.clear();
      for (const auto& s : seeds) {
        if (!s.is_number_unsigned()) throw Error(ErrorCode::InvalidConfig, "seeds: entries must be non-negative integers");
        c.seeds.push_back(s.get<std::uint64_t>());
      }
    }
    if (j.contains("noise_annotator")) {
      const auto& n = j.at("noise_annotator");
      detail::reject_unknown(n, {{"annotator_id", 0}}, ErrorCode::InvalidConfig, "noise_annotator");
      detail::read_field(n, "annotator_id", c.noise_annotator.annotator_id, ErrorCode::InvalidConfig, "noise_annotator");
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    detail::read_field(j, "save_checkpoints", c.save_checkpoints, ErrorCode::InvalidConfig, "config");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("run config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedRecord) throw Error(ErrorCode::InvalidConfig, e.what());
    throw;
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  auto c = run_config_from_json(j);
  // Relative corpus paths resolve against the config file's directory.
  if (!c.corpus.empty() && std::filesystem::path(c.corpus).is_relative()) {
    const auto candidate = path.parent_path() / c.corpus;
    if (std::filesystem::exists(candidate)) c.corpus = candidate.string();
  }
  return c;
}

std::string config_hash(const RunConfig& config) { return hash_hex(hashed_fields(config).dump()); }

Corpus load_or_generate_corpus(const RunConfig& config) {
  if (!config.corpus.empty()) return load_corpus(config.corpus);
  return generate_corpus(config.synthetic).corpus;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace curio
