#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "curio/config.hpp"
#include "curio/experiment.hpp"
#include "curio/report.hpp"
#include "curio/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunFlags {
  std::string config;
  std::string out;
  std::string corpus;
  std::vector<std::uint64_t> seeds;
  std::optional<int> k;
  std::optional<double> lambda;
  std::string inference;
  std::string heldout;
  std::string split_unit;
  std::string forward_loss_space;
  std::string mode;
  bool score_as_text = false;
  bool save_checkpoints = false;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("-c,--config", f.config, "Run config JSON (defaults apply when omitted)");
  cmd->add_option("-o,--out", f.out, "Output directory (overrides output_dir)");
  cmd->add_option("--corpus", f.corpus, "Corpus JSONL (overrides the config; default: synthetic corpus)");
  cmd->add_option("--seeds", f.seeds, "Run seeds (overrides seeds)")->delimiter(',');
  cmd->add_option("--k", f.k, "Number of folds (overrides split.k)");
  cmd->add_option("--lambda", f.lambda, "Backward-loss weight (overrides icm.lambda)");
  cmd->add_option("--inference", f.inference, "Curiosity inference mode: explanation or expert-prior");
  cmd->add_option("--heldout", f.heldout, "Held-out dimension for ood runs");
  cmd->add_option("--split-unit", f.split_unit, "Fold unit: group keeps a (story, dimension) pair in one fold")
      ->check(CLI::IsMember({"group", "example"}));
  cmd->add_option("--forward-loss-space", f.forward_loss_space, "Space of the cosine forward loss")
      ->check(CLI::IsMember({"repr", "logit-sign"}));
  cmd->add_option("--mode", f.mode, "Models to train")->check(CLI::IsMember({"both", "icm", "baseline"}));
  cmd->add_flag("--score-as-text", f.score_as_text, "Render the curiosity score as '<CREAT> x.xxxx' text features");
  cmd->add_flag("--save-checkpoints", f.save_checkpoints, "Write model checkpoints under <out>/checkpoints");
  cmd->add_flag("-q,--quiet", f.quiet, "Suppress progress output");
}

curio::RunConfig resolve_config(const RunFlags& f) {
  curio::RunConfig c = f.config.empty() ? curio::RunConfig{} : curio::load_run_config(f.config);
  if (!f.out.empty()) c.output_dir = f.out;
  if (!f.corpus.empty()) c.corpus = f.corpus;
  if (!f.seeds.empty()) c.seeds = f.seeds;
  if (f.k) c.split.k = *f.k;
  if (f.lambda) c.icm.lambda = *f.lambda;
  if (!f.inference.empty()) c.inference = curio::parse_inference_mode(f.inference);
  if (!f.heldout.empty()) c.split.heldout = curio::parse_dimension(f.heldout);
  if (!f.split_unit.empty()) c.split.unit = f.split_unit == "group" ? curio::SplitUnit::Group : curio::SplitUnit::Example;
  if (!f.forward_loss_space.empty()) {
    c.icm.forward_loss_space =
        f.forward_loss_space == "repr" ? curio::ForwardLossSpace::Repr : curio::ForwardLossSpace::LogitSign;
  }
  if (f.mode == "both") c.mode = curio::RunMode::Both;
  if (f.mode == "icm") c.mode = curio::RunMode::Icm;
  if (f.mode == "baseline") c.mode = curio::RunMode::Baseline;
  if (f.score_as_text) c.judge.score_as_text = true;
  if (f.save_checkpoints) c.save_checkpoints = true;
  curio::validate(c);
  return c;
}

curio::ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& msg) { std::cerr << "[curio] " << msg << std::endl; };
}

void print_summary(const curio::ExperimentResult& r) {
  for (const auto& [model, rep] : r.reports) {
    std::cout << model << ":";
    for (const auto name : curio::kMetricNames) {
      std::cout << "  " << name << ' ' << curio::format_cell(rep.aggregate.at(std::string(name)));
    }
    std::cout << '\n';
  }
  for (const auto& t : r.significance) {
    std::cout << "icm-vs-baseline " << t.metric << ": delta " << t.mean_delta << ", p "
              << (t.undefined ? std::string("undefined") : std::to_string(t.p)) << '\n';
  }
}

int cmd_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
  curio::SyntheticSpec spec = curio::default_synthetic_spec();
  if (!spec_path.empty()) {
    json j;
    try {
      j = json::parse(curio::read_file(spec_path));
    } catch (const json::parse_error& e) {
      throw curio::Error(curio::ErrorCode::SpecInvalid, spec_path + ": " + e.what());
    }
    spec = curio::synthetic_spec_from_json(j);
  }
  if (seed) spec.seed = *seed;
  const auto syn = curio::generate_corpus(spec);
  const fs::path dir(out);
  curio::write_corpus(syn.corpus, dir / "corpus.jsonl");
  curio::write_file(dir / "ground_truth.jsonl", curio::ground_truth_jsonl(syn.truth));
  curio::write_file(dir / "spec.json", curio::synthetic_spec_to_json(spec).dump(2) + "\n");
  std::cout << "wrote " << syn.corpus.examples().size() << " examples over " << syn.corpus.stories().size()
            << " stories to " << (dir / "corpus.jsonl").string() << '\n';
  return 0;
}

int cmd_validate(const std::string& corpus, const std::string& config, const std::string& spec) {
  if (corpus.empty() && config.empty() && spec.empty()) {
    throw curio::Error(curio::ErrorCode::InvalidConfig, "validate needs --corpus, --config or --spec");
  }
  if (!corpus.empty()) {
    const auto c = curio::load_corpus(corpus);
    std::cout << "corpus ok: " << c.stories().size() << " stories, " << c.examples().size() << " examples, "
              << c.annotator_ids().size() << " annotators\n";
    for (const auto& w : c.warnings()) std::cout << "warning: " << w << '\n';
  }
  if (!config.empty()) {
    const auto c = curio::load_run_config(config);
    std::cout << "config ok: hash " << curio::config_hash(c) << '\n';
  }
  if (!spec.empty()) {
    json j;
    try {
      j = json::parse(curio::read_file(spec));
    } catch (const json::parse_error& e) {
      throw curio::Error(curio::ErrorCode::SpecInvalid, spec + ": " + e.what());
    }
    (void)curio::synthetic_spec_from_json(j);
    std::cout << "spec ok\n";
  }
  return 0;
}

int cmd_infer(const std::string& icm_path, const std::string& judge_path, const std::string& corpus_path,
              const std::string& mode_name, const std::string& out, bool force) {
  const auto icm = curio::parse_icm(curio::read_file(icm_path));
  const auto judge_text = curio::read_file(judge_path);
  const auto judge_hash = json::parse(judge_text).at("config_hash").get<std::string>();
  const auto icm_hash = json::parse(curio::read_file(icm_path)).at("config_hash").get<std::string>();
  if (icm_hash != judge_hash && !force) {
    throw curio::Error(curio::ErrorCode::ConfigMismatch,
                       "ICM checkpoint " + icm_hash + " and judge checkpoint " + judge_hash + " differ (use --force)");
  }
  const auto judge = curio::parse_judge(judge_text);
  const auto corpus = curio::load_corpus(corpus_path);
  const auto mode = curio::parse_inference_mode(mode_name);
  std::vector<curio::VerdictPrediction> preds;
  std::vector<curio::CuriosityRecord> records;
  for (std::size_t i = 0; i < corpus.examples().size(); ++i) {
    const auto& ex = corpus.examples()[i];
    std::optional<std::string> expl;
    if (mode == curio::InferenceMode::ExplanationAvailable) expl = ex.annotation.explanation;
    auto r = curio::infer_pipeline(icm, judge, corpus.story_of(ex), ex.dimension, ex.annotation.expert_id, expl, mode);
    r.prediction.example = i;
    preds.push_back(r.prediction);
    records.push_back(r.curiosity);
  }
  const auto text = curio::predictions_jsonl(corpus, preds, judge.mode == curio::JudgeMode::Icm
                                                                 ? std::span<const curio::CuriosityRecord>(records)
                                                                 : std::span<const curio::CuriosityRecord>(),
                                             mode, judge_hash);
  if (out.empty()) {
    std::cout << text;
  } else {
    curio::write_file(out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curio: curiosity-conditioned personalized judge experiments"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string synth_out = "data/synthetic";
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-annotator corpus");
  synth->add_option("-s,--spec", spec_path, "Synthetic spec JSON (default spec when omitted)");
  synth->add_option("-o,--out", synth_out, "Output directory for corpus.jsonl and ground_truth.jsonl");
  synth->add_option("--seed", synth_seed, "Override the spec seed");

  RunFlags cv_flags;
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation: ICM judge vs baseline");
  add_run_flags(crossval, cv_flags);

  RunFlags ood_flags;
  auto* ood = app.add_subcommand("ood", "Train on four dimensions, test on the held-out one");
  add_run_flags(ood, ood_flags);

  RunFlags ab_flags;
  bool no_inverse = false;
  bool with_noise = false;
  auto* ablate = app.add_subcommand("ablate", "Inverse-model ablation (lambda 1 vs 0, with/without noise annotator)");
  add_run_flags(ablate, ab_flags);
  ablate->add_flag("--no-inverse", no_inverse, "Only the clean-corpus rows (lambda 1 vs 0)");
  ablate->add_flag("--with-noise-annotator", with_noise, "Only the rows with an injected noise annotator");

  std::string report_dir;
  std::string report_ood;
  auto* report = app.add_subcommand("report", "Render report.md and SVG charts for a run directory");
  report->add_option("run_dir", report_dir, "Run directory")->required();
  report->add_option("--ood-dir", report_ood, "OOD run directory; writes id_ood.svg next to report.md");

  std::string v_corpus;
  std::string v_config;
  std::string v_spec;
  auto* validate = app.add_subcommand("validate", "Validate a corpus, run config or synthetic spec");
  validate->add_option("--corpus", v_corpus, "Corpus JSONL");
  validate->add_option("--config", v_config, "Run config JSON");
  validate->add_option("--spec", v_spec, "Synthetic spec JSON");

  std::string i_icm;
  std::string i_judge;
  std::string i_corpus;
  std::string i_mode = "explanation";
  std::string i_out;
  bool i_force = false;
  auto* infer = app.add_subcommand("infer", "Score a corpus with saved ICM and judge checkpoints");
  infer->add_option("--icm", i_icm, "ICM checkpoint")->required();
  infer->add_option("--judge", i_judge, "Judge checkpoint")->required();
  infer->add_option("--corpus", i_corpus, "Corpus JSONL")->required();
  infer->add_option("--mode", i_mode, "explanation or expert-prior");
  infer->add_option("-o,--out", i_out, "Predictions JSONL (stdout when omitted)");
  infer->add_flag("--force", i_force, "Accept checkpoints with differing config hashes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_path, synth_out, synth_seed);
    if (crossval->parsed() || ood->parsed()) {
      const bool is_cv = crossval->parsed();
      const auto& flags = is_cv ? cv_flags : ood_flags;
      auto config = resolve_config(flags);
      const auto corpus = curio::load_or_generate_corpus(config);
      const auto result = is_cv ? curio::run_crossval(config, corpus, progress_printer(flags.quiet))
                                : curio::run_ood(config, corpus, progress_printer(flags.quiet));
      curio::write_experiment(result, config.output_dir);
      print_summary(result);
      std::cout << "artifacts in " << config.output_dir << '\n';
      return 0;
    }
    if (ablate->parsed()) {
      auto config = resolve_config(ab_flags);
      const auto corpus = curio::load_or_generate_corpus(config);
      const auto result = curio::run_ablation(config, corpus, no_inverse || !with_noise, with_noise || !no_inverse,
                                              progress_printer(ab_flags.quiet));
      curio::write_ablation(result, config.output_dir);
      for (const auto& row : result.rows) {
        std::cout << row.method << " | " << row.annotation << " | F1 " << curio::format_cell(row.f1)
                  << " | noise attribution " << row.noise_attribution << '\n';
      }
      std::cout << "artifacts in " << config.output_dir << '\n';
      return 0;
    }
    if (report->parsed()) {
      curio::write_report(report_dir);
      if (!report_ood.empty()) {
        curio::write_file(fs::path(report_dir) / "id_ood.svg", curio::render_id_ood_svg(report_dir, report_ood));
      }
      std::cout << "wrote " << (fs::path(report_dir) / "report.md").string() << '\n';
      return 0;
    }
    if (validate->parsed()) return cmd_validate(v_corpus, v_config, v_spec);
    if (infer->parsed()) return cmd_infer(i_icm, i_judge, i_corpus, i_mode, i_out, i_force);
  } catch (const curio::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return curio::is_user_error(e.code()) ? 2 : 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
