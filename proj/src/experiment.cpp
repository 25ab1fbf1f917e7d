#include "curio/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "curio/hash.hpp"
#include "curio/report.hpp"

namespace curio {

using json = nlohmann::json;

namespace {

std::string keys_hash(const Corpus& corpus, std::span<const std::size_t> indices) {
  std::vector<std::string> keys;
  keys.reserve(indices.size());
  for (const auto i : indices) keys.push_back(corpus.example_key(i));
  std::sort(keys.begin(), keys.end());
  std::string joined;
  for (const auto& k : keys) {
    joined += k;
    joined += '\n';
  }
  return hash_hex(joined);
}

ModelPredictions to_model_predictions(const std::vector<VerdictPrediction>& preds,
                                      std::span<const CuriosityRecord> records, std::string mode) {
  ModelPredictions m;
  for (const auto& p : preds) {
    m.pred.push_back(verdict_label(p.verdict));
    m.prob_yes.push_back(p.probability_yes);
  }
  for (const auto& r : records) m.curiosity.push_back(r.score);
  m.mode = std::move(mode);
  return m;
}

FoldMetrics metrics_of(const ModelPredictions& m, const std::vector<int>& truth) {
  return evaluate(m.pred, m.prob_yes, truth);
}

/// Metrics restricted to examples whose annotator passes keep().
template <typename Keep>
FoldMetrics subset_metrics(const FoldOutcome& f, const std::string& model, Keep keep) {
  const auto& m = f.predictions.at(model);
  ModelPredictions sub;
  std::vector<int> truth;
  for (std::size_t k = 0; k < f.truth.size(); ++k) {
    if (!keep(f.annotator[k])) continue;
    sub.pred.push_back(m.pred[k]);
    sub.prob_yes.push_back(m.prob_yes[k]);
    truth.push_back(f.truth[k]);
  }
  return metrics_of(sub, truth);
}

void report_progress(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

}  // namespace

FoldOutcome run_split(const RunConfig& config, const Corpus& corpus, const CorpusFeatures& features,
                      std::span<const std::size_t> train, std::span<const std::size_t> test, std::uint64_t seed,
                      int fold, const std::filesystem::path& checkpoint_dir) {
  const auto hash = config_hash(config);
  FoldOutcome out;
  out.seed = seed;
  out.fold = fold;
  out.n_train = train.size();
  out.n_test = test.size();
  out.train_keys_hash = keys_hash(corpus, train);
  out.test_indices.assign(test.begin(), test.end());
  for (const auto i : test) {
    const auto& a = corpus.examples().at(i).annotation;
    out.truth.push_back(verdict_label(a.verdict));
    out.annotator.push_back(a.expert_id);
    out.test_story_ids.push_back(corpus.story_of(corpus.examples()[i]).id);
    out.test_dimensions.push_back(corpus.examples()[i].dimension);
  }
  const auto model_seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(fold));
  const auto judge_seed = derive_seed(model_seed, 7);
  auto save = [&](const std::string& name, const std::string& text) {
    out.checkpoint_hashes[name] = hash_hex(text);
    if (!checkpoint_dir.empty()) write_file(checkpoint_dir / (name + ".json"), text);
  };

  if (config.mode != RunMode::Baseline) {
    auto trained = train_icm(corpus, features, train, config.encoder, config.icm, model_seed);
    const auto& icm = trained.model;
    out.icm_log = std::move(trained.log);
    save("icm", serialize_icm(icm, hash));

    const auto train_records = score_examples(icm, corpus, features, train, InferenceMode::ExplanationAvailable);
    const auto test_a = score_examples(icm, corpus, features, test, InferenceMode::ExplanationAvailable);
    const auto test_b = score_examples(icm, corpus, features, test, InferenceMode::ExpertPrior);
    out.test_records = config.inference == InferenceMode::ExplanationAvailable ? test_a : test_b;
    for (const auto& r : test_a) out.base_pred.push_back(r.s_a >= 0.0 ? 1 : 0);

    out.attribution_accuracy = attribution_accuracy(icm, corpus, features, test);
    std::map<int, std::vector<std::size_t>> by_annotator;
    for (std::size_t k = 0; k < test.size(); ++k) by_annotator[out.annotator[k]].push_back(test[k]);
    for (const auto& [id, idx] : by_annotator) {
      out.attribution_recall[id] = attribution_accuracy(icm, corpus, features, idx);
    }

    const auto judge = train_judge(corpus, features, train, train_records, config.judge, judge_seed);
    save("judge", serialize_judge(judge.params, hash));
    out.predictions[std::string(kModelIcm)] =
        to_model_predictions(predict_examples(judge.params, corpus, features, test, out.test_records),
                             out.test_records, std::string(inference_mode_name(config.inference)));
    out.predictions[std::string(kModelIcmPrior)] =
        to_model_predictions(predict_examples(judge.params, corpus, features, test, test_b), test_b,
                             std::string(inference_mode_name(InferenceMode::ExpertPrior)));
  }
  if (config.mode != RunMode::Icm) {
    const auto baseline = train_baseline(corpus, features, train, config.judge, judge_seed);
    save("baseline", serialize_judge(baseline.params, hash));
    out.predictions[std::string(kModelBaseline)] =
        to_model_predictions(predict_examples(baseline.params, corpus, features, test), {}, "baseline");
  }
  for (const auto& [name, m] : out.predictions) out.metrics[name] = metrics_of(m, out.truth);
  return out;
}

namespace {

void finalize(ExperimentResult& r) {
  std::map<std::string, std::vector<FoldMetrics>> per_model;
  std::map<std::string, std::vector<int>> pooled_annotator;
  std::map<std::string, ModelPredictions> pooled;
  std::map<std::string, std::vector<int>> pooled_truth;
  std::vector<double> scores;
  std::vector<int> base;
  std::vector<int> truth;
  for (const auto& f : r.folds) {
    for (const auto& [name, m] : f.metrics) per_model[name].push_back(m);
    for (const auto& [name, m] : f.predictions) {
      auto& p = pooled[name];
      p.pred.insert(p.pred.end(), m.pred.begin(), m.pred.end());
      p.prob_yes.insert(p.prob_yes.end(), m.prob_yes.begin(), m.prob_yes.end());
      pooled_truth[name].insert(pooled_truth[name].end(), f.truth.begin(), f.truth.end());
      pooled_annotator[name].insert(pooled_annotator[name].end(), f.annotator.begin(), f.annotator.end());
    }
    for (std::size_t k = 0; k < f.test_records.size(); ++k) {
      scores.push_back(f.test_records[k].score);
      base.push_back(f.base_pred[k]);
      truth.push_back(f.truth[k]);
    }
  }
  for (auto& [name, folds] : per_model) r.reports[name] = aggregate(std::move(folds));
  for (const auto& [name, p] : pooled) {
    r.per_annotator[name] = evaluate_by_annotator(pooled_annotator[name], p.pred, p.prob_yes, pooled_truth[name]);
  }
  const auto icm = r.reports.find(std::string(kModelIcm));
  const auto baseline = r.reports.find(std::string(kModelBaseline));
  if (icm != r.reports.end() && baseline != r.reports.end()) {
    r.significance = compare_reports(icm->second, baseline->second);
  }
  r.histogram = curiosity_histogram(scores, base, truth);
}

}  // namespace

ExperimentResult run_crossval(const RunConfig& config, const Corpus& corpus, const ProgressFn& progress) {
  validate(config);
  ExperimentResult r;
  r.kind = "crossval";
  r.config = config;
  r.config_hash = config_hash(config);
  const CorpusFeatures features(corpus, config.encoder.features);
  for (const auto seed : config.seeds) {
    const auto plan = make_kfold(corpus, config.split.k, seed, config.split.unit);
    for (int f = 0; f < plan.num_folds(); ++f) {
      report_progress(progress, "seed " + std::to_string(seed) + " fold " + std::to_string(f + 1) + "/" +
                                    std::to_string(plan.num_folds()));
      const auto train = plan.train_indices(f);
      const auto test = plan.test_indices(f);
      std::filesystem::path ckpt;
      if (config.save_checkpoints) {
        ckpt = std::filesystem::path(config.output_dir) / "checkpoints" /
               ("seed" + std::to_string(seed) + "_fold" + std::to_string(f));
      }
      try {
        r.folds.push_back(run_split(config, corpus, features, train, test, seed, f, ckpt));
      } catch (const Error& e) {
        throw Error(e.code(), "fold " + std::to_string(f) + " (seed " + std::to_string(seed) + "): " + e.what());
      }
    }
  }
  finalize(r);
  return r;
}

ExperimentResult run_ood(const RunConfig& config, const Corpus& corpus, const ProgressFn& progress) {
  validate(config);
  ExperimentResult r;
  r.kind = "ood";
  r.config = config;
  r.config_hash = config_hash(config);
  const CorpusFeatures features(corpus, config.encoder.features);
  const auto plan = make_ood_split(corpus, config.split.heldout);
  const auto train = plan.train_indices(0);
  const auto test = plan.test_indices(0);
  for (const auto seed : config.seeds) {
    report_progress(progress, "seed " + std::to_string(seed) + " held-out " +
                                  std::string(dimension_name(config.split.heldout)));
    std::filesystem::path ckpt;
    if (config.save_checkpoints) {
      ckpt = std::filesystem::path(config.output_dir) / "checkpoints" / ("seed" + std::to_string(seed) + "_ood");
    }
    r.folds.push_back(run_split(config, corpus, features, train, test, seed, 0, ckpt));
  }
  finalize(r);
  return r;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string metrics_row(const std::string& hash, const std::string& seed, const std::string& fold,
                        const std::string& model, const FoldMetrics& m) {
  std::ostringstream os;
  os << hash << ',' << seed << ',' << fold << ',' << model << ',' << m.n;
  std::string flags;
  for (const auto name : kMetricNames) {
    os << ',' << num(m.get(name));
    if (m.undefined(name)) flags += (flags.empty() ? "" : ";") + std::string(name);
  }
  os << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ',' << m.confusion.tn << ','
     << flags << '\n';
  return os.str();
}

constexpr const char* kMetricsHeader =
    "config_hash,seed,fold,model,n,pearson,spearman,kappa,precision,recall,f1,tp,fp,fn,tn,undefined\n";

}  // namespace

void write_experiment(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& hash = r.config_hash;

  std::string metrics = kMetricsHeader;
  for (const auto& f : r.folds) {
    for (const auto& [name, m] : f.metrics) {
      metrics += metrics_row(hash, std::to_string(f.seed), std::to_string(f.fold), name, m);
    }
  }
  for (const auto& [name, rep] : r.reports) {
    std::ostringstream mean;
    std::ostringstream sd;
    mean << hash << ",all,mean," << name << ',' << rep.per_fold.size();
    sd << hash << ",all,sd," << name << ',' << rep.per_fold.size();
    std::string flags;
    for (const auto metric : kMetricNames) {
      const auto& cell = rep.aggregate.at(std::string(metric));
      mean << ',' << num(cell.mean);
      sd << ',' << num(cell.sd);
      if (cell.flagged_folds > 0) flags += (flags.empty() ? "" : ";") + std::string(metric);
    }
    mean << ",,,,," << flags << '\n';
    sd << ",,,,," << (rep.per_fold.size() < 2 ? "sd" : "") << '\n';
    metrics += mean.str() + sd.str();
  }
  write_file(dir / "metrics.csv", metrics);

  std::string sig = "config_hash,comparison,metric,mean_delta,t,df,p,significant,undefined\n";
  for (const auto& t : r.significance) {
    sig += hash + ",icm-vs-baseline," + t.metric + ',' + num(t.mean_delta) + ',' + num(t.t) + ',' +
           std::to_string(t.df) + ',' + (t.undefined ? std::string("nan") : num(t.p)) + ',' +
           (t.significant ? "yes" : "no") + ',' + (t.undefined ? "yes" : "no") + '\n';
  }
  write_file(dir / "significance.csv", sig);

  std::string per_annotator =
      "config_hash,model,annotator,n,pearson,spearman,kappa,precision,recall,f1,tp,fp,fn,tn,undefined\n";
  for (const auto& [name, by] : r.per_annotator) {
    for (const auto& [id, m] : by) {
      std::ostringstream os;
      os << hash << ',' << name << ',' << id << ',' << m.n;
      std::string flags;
      for (const auto metric : kMetricNames) {
        os << ',' << num(m.get(metric));
        if (m.undefined(metric)) flags += (flags.empty() ? "" : ";") + std::string(metric);
      }
      os << ',' << m.confusion.tp << ',' << m.confusion.fp << ',' << m.confusion.fn << ',' << m.confusion.tn << ','
         << flags << '\n';
      per_annotator += os.str();
    }
  }
  write_file(dir / "per_annotator.csv", per_annotator);

  std::string curiosity;
  std::string predictions;
  for (const auto& f : r.folds) {
    curiosity += curiosity_jsonl(f.test_records, hash);
    for (const auto& [name, m] : f.predictions) {
      for (std::size_t k = 0; k < m.pred.size(); ++k) {
        json j{{"story_id", f.test_story_ids[k]},
               {"dimension", dimension_name(f.test_dimensions[k])},
               {"expert_id", f.annotator[k]},
               {"prob_yes", m.prob_yes[k]},
               {"verdict", m.pred[k] != 0 ? "yes" : "no"},
               {"curiosity_score", m.curiosity.empty() ? json(nullptr) : json(m.curiosity[k])},
               {"mode", m.mode},
               {"model", name},
               {"seed", f.seed},
               {"fold", f.fold},
               {"config_hash", hash}};
        predictions += j.dump() + '\n';
      }
    }
  }
  write_file(dir / "curiosity.jsonl", curiosity);
  write_file(dir / "predictions.jsonl", predictions);
  write_file(dir / "curiosity_hist.csv", histogram_csv(r.histogram, hash));
  write_file(dir / "curiosity_hist.svg", histogram_svg(r.histogram));

  json manifest;
  manifest["kind"] = r.kind;
  manifest["config_hash"] = hash;
  manifest["config"] = run_config_to_json(r.config);
  manifest["matched_hyperparameters"] = {{"icm_judge", judge_config_to_json(r.config.judge)},
                                         {"baseline", judge_config_to_json(r.config.judge)}};
  manifest["explanation_sources"] = "train split of each fold";
  json folds = json::array();
  for (const auto& f : r.folds) {
    json log = json::array();
    for (const auto& e : f.icm_log) {
      log.push_back({{"phase", e.phase},
                     {"epoch", e.epoch},
                     {"loss", e.loss},
                     {"forward", e.forward},
                     {"backward", e.backward},
                     {"attribution_accuracy", e.attribution_accuracy}});
    }
    json recall = json::object();
    for (const auto& [id, v] : f.attribution_recall) recall[std::to_string(id)] = v;
    folds.push_back({{"seed", f.seed},
                     {"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test},
                     {"train_keys_hash", f.train_keys_hash},
                     {"checkpoint_hashes", f.checkpoint_hashes},
                     {"attribution_accuracy", f.attribution_accuracy},
                     {"attribution_recall", recall},
                     {"icm_log", log}});
  }
  manifest["folds"] = folds;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_report(dir);
}

// ---------------------------------------------------------------------------
// Ablation

AblationResult run_ablation(const RunConfig& config, const Corpus& corpus, bool include_clean, bool include_noise,
                            const ProgressFn& progress) {
  validate(config);
  if (!include_clean && !include_noise) include_clean = include_noise = true;
  AblationResult result;
  result.config = config;
  result.config_hash = config_hash(config);
  const int noise_id = config.noise_annotator.annotator_id;

  struct Setting {
    bool noise;
    double lambda;
  };
  std::vector<Setting> settings;
  for (const bool noise : {false, true}) {
    if ((noise && !include_noise) || (!noise && !include_clean)) continue;
    settings.push_back({noise, 1.0});
    settings.push_back({noise, 0.0});
  }
  std::optional<Corpus> noisy;
  if (include_noise) noisy = inject_noise_annotator(corpus, config.noise_annotator, config.synthetic.seed);

  for (const auto& s : settings) {
    RunConfig c = config;
    c.mode = RunMode::Icm;
    c.icm.lambda = s.lambda;
    c.save_checkpoints = false;
    const Corpus& data = s.noise ? *noisy : corpus;
    const CorpusFeatures features(data, c.encoder.features);
    AblationRow row;
    row.method = s.lambda > 0.0 ? "ICM" : "ICM w/o inverse";
    row.annotation = s.noise ? "experts + noise" : "experts";
    row.lambda = s.lambda;
    row.with_noise = s.noise;
    std::vector<FoldMetrics> per_fold;
    double noise_recall = 0.0;
    double accuracy = 0.0;
    int count = 0;
    for (const auto seed : c.seeds) {
      const auto plan = make_kfold(data, c.split.k, seed, c.split.unit);
      for (int f = 0; f < plan.num_folds(); ++f) {
        report_progress(progress, row.method + " / " + row.annotation + ": seed " + std::to_string(seed) + " fold " +
                                      std::to_string(f + 1));
        const auto outcome =
            run_split(c, data, features, plan.train_indices(f), plan.test_indices(f), seed, f);
        per_fold.push_back(subset_metrics(outcome, std::string(kModelIcm), [](int id) { return is_expert_id(id); }));
        row.fold_f1.push_back(per_fold.back().get("f1"));
        if (s.noise) noise_recall += outcome.attribution_recall.at(noise_id);
        accuracy += outcome.attribution_accuracy;
        ++count;
      }
    }
    const auto rep = aggregate(std::move(per_fold));
    row.f1 = rep.aggregate.at("f1");
    row.pearson = rep.aggregate.at("pearson");
    row.kappa = rep.aggregate.at("kappa");
    row.noise_attribution = s.noise ? noise_recall / count : 0.0;
    row.attribution_accuracy = accuracy / count;
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_ablation(const AblationResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string csv =
      "config_hash,method,annotation,lambda,f1_mean,f1_sd,pearson_mean,pearson_sd,kappa_mean,kappa_sd,"
      "noise_attribution,attribution_accuracy\n";
  for (const auto& row : r.rows) {
    csv += r.config_hash + ',' + row.method + ',' + row.annotation + ',' + num(row.lambda) + ',' + num(row.f1.mean) +
           ',' + num(row.f1.sd) + ',' + num(row.pearson.mean) + ',' + num(row.pearson.sd) + ',' +
           num(row.kappa.mean) + ',' + num(row.kappa.sd) + ',' + num(row.noise_attribution) + ',' +
           num(row.attribution_accuracy) + '\n';
  }
  write_file(dir / "ablation.csv", csv);
  json manifest{{"kind", "ablation"}, {"config_hash", r.config_hash}, {"config", run_config_to_json(r.config)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_report(dir);
}

}  // namespace curio
