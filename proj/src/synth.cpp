#include "curio/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "curio/eval.hpp"
#include "curio/lexicons_data.hpp"
#include "curio/random.hpp"

namespace curio {

using json = nlohmann::json;

const json& lexicons() {
  static const json lex = json::parse(kLexiconsJson);
  return lex;
}

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec s;
  s.annotators = {{1, 1.5, {}, "1", false}, {2, -1.5, {}, "2", false}, {3, 0.0, {}, "3", false}};
  return s;
}

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::SpecInvalid, "spec field '" + field + "': " + why);
}

std::string style_key(const AnnotatorProfile& a) {
  return a.style.empty() ? std::to_string(a.annotator_id) : a.style;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename T>
const T& pick_from(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

std::string replace_cue(std::string tmpl, const std::string& cue) {
  const auto pos = tmpl.find("{cue}");
  if (pos != std::string::npos) tmpl.replace(pos, 5, cue);
  return tmpl;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace

void validate(const SyntheticSpec& s) {
  if (s.n_stories < 1) invalid("n_stories", "must be >= 1");
  if (s.dimensions.empty()) invalid("dimensions", "must list at least one dimension");
  if (!(s.temperature > 0.0)) invalid("temperature", "must be positive");
  if (s.leak_strength < 0.0 || s.leak_strength > 1.0) invalid("leak_strength", "must be in [0,1]");
  if (s.dimension_correlation < 0.0 || s.dimension_correlation > 1.0) {
    invalid("dimension_correlation", "must be in [0,1]");
  }
  if (s.evidence_scale < 0.0) invalid("evidence_scale", "must be >= 0");
  if (s.cue_woe < 0.0) invalid("cue_woe", "must be >= 0");
  if (s.n_cues < 0) invalid("n_cues", "must be >= 0");
  if (s.filler_sentences < 0) invalid("filler_sentences", "must be >= 0");
  std::set<int> ids;
  int experts = 0;
  const auto& styles = lexicons().at("styles");
  for (const auto& a : s.annotators) {
    if (!ids.insert(a.annotator_id).second) {
      invalid("annotators", "duplicate annotator_id " + std::to_string(a.annotator_id));
    }
    if (a.annotator_id < 1) invalid("annotators", "annotator_id must be >= 1");
    if (a.noise) {
      if (is_expert_id(a.annotator_id)) invalid("annotators", "noise annotators must use ids outside {1,2,3}");
    } else {
      if (!is_expert_id(a.annotator_id)) invalid("annotators", "expert annotators must use ids 1..3");
      if (!styles.contains(style_key(a))) invalid("annotators", "unknown style '" + style_key(a) + "'");
      ++experts;
    }
    if (!a.slope.empty() && a.slope.size() != kLatentDim) {
      invalid("annotators", "slope must have " + std::to_string(kLatentDim) + " entries");
    }
  }
  if (experts < 2) invalid("annotators", "needs at least two non-noise annotators");
}

json synthetic_spec_to_json(const SyntheticSpec& s) {
  json ann = json::array();
  for (const auto& a : s.annotators) {
    ann.push_back({{"annotator_id", a.annotator_id},
                   {"bias", a.bias},
                   {"slope", a.slope},
                   {"style", a.style},
                   {"noise", a.noise}});
  }
  json dims = json::array();
  for (const auto d : s.dimensions) dims.push_back(dimension_name(d));
  return {{"n_stories", s.n_stories},
          {"dimensions", dims},
          {"annotators", ann},
          {"evidence_scale", s.evidence_scale},
          {"dimension_correlation", s.dimension_correlation},
          {"temperature", s.temperature},
          {"leak_strength", s.leak_strength},
          {"filler_sentences", s.filler_sentences},
          {"cue_woe", s.cue_woe},
          {"n_cues", s.n_cues},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  if (!j.is_object()) invalid("<root>", "spec must be a JSON object");
  static const std::set<std::string> known{"n_stories",   "dimensions",  "annotators",       "evidence_scale",
                                           "dimension_correlation",    "temperature", "leak_strength",
                                           "filler_sentences",         "cue_woe",     "n_cues", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) invalid(key, "unknown field");
  }
  SyntheticSpec s = default_synthetic_spec();
  auto num = [&](const char* field, auto& out) {
    if (!j.contains(field)) return;
    const auto& v = j.at(field);
    if (!v.is_number()) invalid(field, "must be a number");
    using T = std::remove_reference_t<decltype(out)>;
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) invalid(field, "must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<long long>() < 0) invalid(field, "must be >= 0");
      }
    }
    out = v.get<T>();
  };
  num("n_stories", s.n_stories);
  num("evidence_scale", s.evidence_scale);
  num("dimension_correlation", s.dimension_correlation);
  num("temperature", s.temperature);
  num("leak_strength", s.leak_strength);
  num("filler_sentences", s.filler_sentences);
  num("cue_woe", s.cue_woe);
  num("n_cues", s.n_cues);
  num("seed", s.seed);
  if (j.contains("dimensions")) {
    if (!j.at("dimensions").is_array()) invalid("dimensions", "must be an array of dimension names");
    s.dimensions.clear();
    for (const auto& d : j.at("dimensions")) {
      if (!d.is_string()) invalid("dimensions", "entries must be strings");
      const auto parsed = try_parse_dimension(d.get<std::string>());
      if (!parsed) invalid("dimensions", "unknown dimension '" + d.get<std::string>() + "'");
      s.dimensions.push_back(*parsed);
    }
  }
  if (j.contains("annotators")) {
    if (!j.at("annotators").is_array()) invalid("annotators", "must be an array");
    s.annotators.clear();
    for (const auto& a : j.at("annotators")) {
      if (!a.is_object() || !a.contains("annotator_id") || !a.at("annotator_id").is_number_integer()) {
        invalid("annotators", "each entry needs an integer annotator_id");
      }
      AnnotatorProfile p;
      p.annotator_id = a.at("annotator_id").get<int>();
      try {
        p.bias = a.value("bias", 0.0);
        p.slope = a.value("slope", std::vector<double>{});
        p.style = a.value("style", std::string{});
        p.noise = a.value("noise", false);
      } catch (const json::exception& e) {
        invalid("annotators", e.what());
      }
      s.annotators.push_back(std::move(p));
    }
  }
  validate(s);
  return s;
}

// ---------------------------------------------------------------------------

namespace {

struct StoryDraw {
  std::vector<double> latent;
  std::string text;
};

StoryDraw draw_story(std::size_t index, const SyntheticSpec& spec, Rng& rng) {
  const auto& story_lex = lexicons().at("story");
  StoryDraw d;
  d.latent.resize(kLatentDim);
  for (auto& v : d.latent) v = rng.normal();
  std::vector<std::string> sentences;
  const auto& latents = story_lex.at("latents");
  for (std::size_t j = 0; j < kLatentDim; ++j) {
    // Tertile cut points of the standard normal.
    int level = d.latent[j] < -0.4307 ? 0 : (d.latent[j] > 0.4307 ? 2 : 1);
    if (!rng.bernoulli(spec.leak_strength)) level = static_cast<int>(rng.below(3));
    const auto options = latents.at(j).at("levels").at(static_cast<std::size_t>(level)).get<std::vector<std::string>>();
    sentences.push_back(pick_from(options, rng));
  }
  const auto filler = story_lex.at("filler").get<std::vector<std::string>>();
  for (int f = 0; f < spec.filler_sentences; ++f) sentences.push_back(pick_from(filler, rng));
  rng.shuffle(std::span<std::string>(sentences));
  d.text = "Story " + std::to_string(index + 1) + ".";
  for (const auto& s : sentences) d.text += " " + s;
  return d;
}

std::string expert_explanation(const AnnotatorProfile& a, Dimension dim, const std::vector<bool>& cue_positive,
                               Rng& rng) {
  const auto& lex = lexicons();
  const auto& style = lex.at("styles").at(style_key(a));
  const auto openers = style.at("openers").get<std::vector<std::string>>();
  const auto templates = style.at("cue_templates").get<std::vector<std::string>>();
  const auto remarks = style.at("remarks").get<std::vector<std::string>>();
  const auto closers = style.at("closers").get<std::vector<std::string>>();
  const auto pos = lex.at("cues").at("positive").get<std::vector<std::string>>();
  const auto neg = lex.at("cues").at("negative").get<std::vector<std::string>>();
  const auto dim_phrase = lex.at("dimensions").at(std::string(dimension_name(dim))).get<std::string>();

  std::string text = pick_from(openers, rng) + " " + dim_phrase + ":";
  if (cue_positive.empty()) text += " " + replace_cue(pick_from(templates, rng), "as it is") + ".";
  for (const bool p : cue_positive) {
    text += " " + capitalize(replace_cue(pick_from(templates, rng), pick_from(p ? pos : neg, rng))) + ".";
  }
  text += " " + pick_from(remarks, rng) + " " + pick_from(closers, rng);
  return text;
}

std::string noise_explanation(Rng& rng) {
  const auto filler = lexicons().at("noise").at("filler").get<std::vector<std::string>>();
  std::string a = pick_from(filler, rng);
  std::string b = pick_from(filler, rng);
  return a + " " + b;
}

std::vector<std::vector<double>> evidence_directions(const SyntheticSpec& spec, Rng& rng) {
  auto unit = [&] {
    std::vector<double> v(kLatentDim);
    double n = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
  };
  const auto shared = unit();
  std::vector<std::vector<double>> beta;
  const double a = std::sqrt(spec.dimension_correlation);
  const double b = std::sqrt(1.0 - spec.dimension_correlation);
  for (std::size_t d = 0; d < kAllDimensions.size(); ++d) {
    const auto own = unit();
    std::vector<double> v(kLatentDim);
    for (std::size_t j = 0; j < kLatentDim; ++j) v[j] = spec.evidence_scale * (a * shared[j] + b * own[j]);
    beta.push_back(std::move(v));
  }
  return beta;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

SyntheticCorpus generate_corpus(const SyntheticSpec& spec) {
  validate(spec);
  Rng param_rng(derive_seed(spec.seed, 100));
  const auto beta = evidence_directions(spec, param_rng);
  Rng story_rng(derive_seed(spec.seed, 101));
  Rng label_rng(derive_seed(spec.seed, 102));
  Rng text_rng(derive_seed(spec.seed, 103));

  std::vector<Story> stories;
  std::vector<std::vector<double>> latents;
  for (std::size_t i = 0; i < spec.n_stories; ++i) {
    auto d = draw_story(i, spec, story_rng);
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04zu", i + 1);
    stories.push_back({id, std::move(d.text)});
    latents.push_back(std::move(d.latent));
  }

  const double q = sigmoid(spec.cue_woe);
  std::vector<AnnotatedExample> examples;
  std::vector<GroundTruth> truth;
  for (std::size_t i = 0; i < spec.n_stories; ++i) {
    for (const auto dim : spec.dimensions) {
      const double f = dot(beta[static_cast<std::size_t>(dim)], latents[i]);
      for (const auto& a : spec.annotators) {
        GroundTruth g;
        g.story_id = stories[i].id;
        g.dimension = dim;
        g.expert_id = a.annotator_id;
        g.latent = latents[i];
        AnnotatedExample ex;
        ex.story_index = i;
        ex.dimension = dim;
        ex.annotation.expert_id = a.annotator_id;
        if (a.noise) {
          g.probability_yes = 0.5;
          ex.annotation.verdict = label_rng.bernoulli(0.5) ? Verdict::Yes : Verdict::No;
          ex.annotation.explanation = noise_explanation(text_rng);
        } else {
          g.item_evidence = f;
          g.annotator_bias = a.bias + (a.slope.empty() ? 0.0 : dot(a.slope, latents[i]));
          g.log_odds = (g.item_evidence + g.annotator_bias) / spec.temperature;
          g.probability_yes = sigmoid(g.log_odds);
          const bool yes = label_rng.bernoulli(g.probability_yes);
          ex.annotation.verdict = yes ? Verdict::Yes : Verdict::No;
          std::vector<bool> cues;
          for (int c = 0; c < spec.n_cues; ++c) {
            const bool consistent = label_rng.bernoulli(q);
            const bool positive = consistent == yes;
            cues.push_back(positive);
            (positive ? g.positive_cues : g.negative_cues) += 1;
          }
          g.woe_increment = spec.cue_woe * (g.positive_cues - g.negative_cues);
          ex.annotation.explanation = expert_explanation(a, dim, cues, text_rng);
        }
        examples.push_back(std::move(ex));
        truth.push_back(std::move(g));
      }
    }
  }
  SyntheticCorpus out{Corpus(std::move(stories), std::move(examples)), std::move(truth)};
  out.corpus.set_metadata("source", "synthetic");
  out.corpus.set_metadata("seed", std::to_string(spec.seed));
  return out;
}

Corpus inject_noise_annotator(const Corpus& corpus, const AnnotatorProfile& profile, std::uint64_t seed) {
  if (!profile.noise) throw Error(ErrorCode::SpecInvalid, "inject_noise_annotator: profile must be a noise profile");
  const auto ids = corpus.annotator_ids();
  if (std::find(ids.begin(), ids.end(), profile.annotator_id) != ids.end() || is_expert_id(profile.annotator_id)) {
    throw Error(ErrorCode::IdCollision, "annotator id " + std::to_string(profile.annotator_id) + " already in use");
  }
  std::set<std::pair<std::size_t, Dimension>> pairs;
  for (const auto& ex : corpus.examples()) pairs.emplace(ex.story_index, ex.dimension);
  Rng rng(derive_seed(seed, 200));
  auto examples = corpus.examples();
  for (const auto& [story, dim] : pairs) {
    AnnotatedExample ex;
    ex.story_index = story;
    ex.dimension = dim;
    ex.annotation.expert_id = profile.annotator_id;
    ex.annotation.verdict = rng.bernoulli(0.5) ? Verdict::Yes : Verdict::No;
    ex.annotation.explanation = noise_explanation(rng);
    examples.push_back(std::move(ex));
  }
  Corpus out(corpus.stories(), std::move(examples), corpus.metadata());
  out.set_metadata("noise_annotator", std::to_string(profile.annotator_id));
  return out;
}

std::string ground_truth_jsonl(std::span<const GroundTruth> truth) {
  std::string out;
  for (const auto& g : truth) {
    json j{{"story_id", g.story_id},
           {"dimension", dimension_name(g.dimension)},
           {"expert_id", g.expert_id},
           {"latent", g.latent},
           {"f", g.item_evidence},
           {"b", g.annotator_bias},
           {"log_odds", g.log_odds},
           {"prob_yes", g.probability_yes},
           {"positive_cues", g.positive_cues},
           {"negative_cues", g.negative_cues},
           {"woe_increment", g.woe_increment}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

ControlVariateReport control_variate_check(std::span<const double> z, std::span<const double> c) {
  if (z.size() != c.size()) throw Error(ErrorCode::InvalidConfig, "control_variate_check: lengths differ");
  if (z.size() < 3) throw Error(ErrorCode::InvalidConfig, "control_variate_check: needs at least 3 observations");
  const auto n = static_cast<double>(z.size());
  const double mz = std::accumulate(z.begin(), z.end(), 0.0) / n;
  const double mc = std::accumulate(c.begin(), c.end(), 0.0) / n;
  double szz = 0.0;
  double scc = 0.0;
  double szc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    szz += (z[i] - mz) * (z[i] - mz);
    scc += (c[i] - mc) * (c[i] - mc);
    szc += (z[i] - mz) * (c[i] - mc);
  }
  if (!(scc > 0.0)) throw Error(ErrorCode::DegenerateControl, "control variate has zero variance");
  ControlVariateReport r;
  r.var_z = szz / (n - 1.0);
  const double var_c = scc / (n - 1.0);
  const double cov = szc / (n - 1.0);
  r.alpha_star = cov / var_c;
  r.rho = (r.var_z > 0.0) ? cov / std::sqrt(r.var_z * var_c) : 0.0;
  std::vector<double> adjusted(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) adjusted[i] = z[i] - r.alpha_star * (c[i] - mc);
  const double ma = std::accumulate(adjusted.begin(), adjusted.end(), 0.0) / n;
  double saa = 0.0;
  for (double v : adjusted) saa += (v - ma) * (v - ma);
  r.var_adjusted = saa / (n - 1.0);
  r.ratio = r.var_z > 0.0 ? r.var_adjusted / r.var_z : 0.0;
  return r;
}

WeightOfEvidenceReport weight_of_evidence_check(const SyntheticSpec& spec, const EncoderConfig& encoder,
                                                const ICMConfig& icm, std::uint64_t seed) {
  const auto syn = generate_corpus(spec);
  const auto plan = make_kfold(syn.corpus, 5, seed);
  const CorpusFeatures features(syn.corpus, encoder.features);
  const auto train = plan.train_indices(0);
  const auto test = plan.test_indices(0);
  const auto trained = train_icm(syn.corpus, features, train, encoder, icm, seed);
  const auto records = score_examples(trained.model, syn.corpus, features, test);
  std::vector<double> scores;
  std::vector<double> increments;
  for (std::size_t k = 0; k < test.size(); ++k) {
    if (!is_expert_id(syn.truth[test[k]].expert_id)) continue;
    scores.push_back(records[k].score);
    increments.push_back(syn.truth[test[k]].woe_increment);
  }
  WeightOfEvidenceReport r;
  r.n = scores.size();
  if (r.n >= 2) {
    const auto p = pearson(scores, increments);
    r.pearson = p.value;
    r.undefined = p.undefined;
  } else {
    r.undefined = true;
  }
  if (r.n > 0) r.mean_score = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(r.n);
  return r;
}

}  // namespace curio
