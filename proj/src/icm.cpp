#include "curio/icm.hpp"
#include "json_field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

namespace curio {

using json = nlohmann::json;

void validate(const ICMConfig& c) {
  if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) throw Error(ErrorCode::InvalidConfig, "icm.lambda must be >= 0");
  if (c.prior_epochs < 0) throw Error(ErrorCode::InvalidConfig, "icm.prior_epochs must be >= 0");
  validate(c.prior_optimizer);
  validate(c.optimizer);
}

json icm_config_to_json(const ICMConfig& c) {
  return {{"lambda", c.lambda},
          {"forward_loss_space", c.forward_loss_space == ForwardLossSpace::Repr ? "repr" : "logit-sign"},
          {"attribution_input", c.attribution_input == AttributionInput::Shared ? "shared" : "separate"},
          {"state_a", c.state_a == PriorConditioning::Expert ? "expert" : "none"},
          {"prior_epochs", c.prior_epochs},
          {"prior_optimizer", optimizer_config_to_json(c.prior_optimizer)},
          {"optimizer", optimizer_config_to_json(c.optimizer)},
          {"adapters", adapter_config_to_json(c.adapters)}};
}

ICMConfig icm_config_from_json(const json& j) {
  ICMConfig c;
  detail::reject_unknown(j, icm_config_to_json(c), ErrorCode::InvalidConfig, "icm");
  detail::read_field(j, "lambda", c.lambda, ErrorCode::InvalidConfig, "icm");
  const auto space = j.value("forward_loss_space", std::string("repr"));
  if (space == "repr") {
    c.forward_loss_space = ForwardLossSpace::Repr;
  } else if (space == "logit-sign") {
    c.forward_loss_space = ForwardLossSpace::LogitSign;
  } else {
    throw Error(ErrorCode::InvalidConfig, "icm.forward_loss_space must be repr or logit-sign");
  }
  const auto attr = j.value("attribution_input", std::string("shared"));
  if (attr != "shared" && attr != "separate") {
    throw Error(ErrorCode::InvalidConfig, "icm.attribution_input must be shared or separate");
  }
  c.attribution_input = attr == "shared" ? AttributionInput::Shared : AttributionInput::Separate;
  const auto state_a = j.value("state_a", std::string("expert"));
  if (state_a != "expert" && state_a != "none") throw Error(ErrorCode::InvalidConfig, "icm.state_a must be expert or none");
  c.state_a = state_a == "expert" ? PriorConditioning::Expert : PriorConditioning::None;
  detail::read_field(j, "prior_epochs", c.prior_epochs, ErrorCode::InvalidConfig, "icm");
  if (j.contains("prior_optimizer")) c.prior_optimizer = optimizer_config_from_json(j.at("prior_optimizer"));
  if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
  if (j.contains("adapters")) c.adapters = adapter_config_from_json(j.at("adapters"));
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------

std::vector<Tensor*> BackwardHead::tensors() {
  std::vector<Tensor*> out{&attribution_matrix, &bias};
  if (encoder) {
    for (auto* t : encoder->tensors()) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> BackwardHead::tensors() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<BackwardHead*>(this)->tensors()) out.push_back(t);
  return out;
}

std::size_t BackwardHead::class_of(int annotator_id) const {
  const auto it = std::find(annotator_ids.begin(), annotator_ids.end(), annotator_id);
  if (it == annotator_ids.end()) {
    throw Error(ErrorCode::UnknownExpert, "annotator id " + std::to_string(annotator_id) + " unknown to backward head");
  }
  return static_cast<std::size_t>(it - annotator_ids.begin());
}

BackwardHead make_backward_head(std::size_t repr_dim, std::vector<int> annotator_ids) {
  BackwardHead head;
  head.annotator_ids = std::move(annotator_ids);
  head.attribution_matrix = Tensor("backward.attribution_matrix", repr_dim, head.annotator_ids.size());
  head.bias = Tensor("backward.bias", 1, head.annotator_ids.size());
  return head;
}

std::vector<Tensor*> IcmModel::tensors() {
  auto out = scorer.tensors();
  for (auto* t : head.tensors()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> IcmModel::tensors() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<IcmModel*>(this)->tensors()) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

[[noreturn]] void degenerate(double na, double nb) {
  std::ostringstream os;
  os << "representation collapsed: |h_A| = " << na << ", |h_B| = " << nb;
  throw Error(ErrorCode::DegenerateNorm, os.str());
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double forward_loss(std::span<const double> h_a, std::span<const double> h_b) {
  const double na = std::sqrt(dot(h_a, h_a));
  const double nb = std::sqrt(dot(h_b, h_b));
  if (na < kDegenerateNorm || nb < kDegenerateNorm) degenerate(na, nb);
  return 1.0 - dot(h_a, h_b) / (na * nb);
}

double forward_loss_with_grad(std::span<const double> h_a, std::span<const double> h_b, std::vector<double>& grad_a,
                              std::vector<double>& grad_b) {
  const double na = std::sqrt(dot(h_a, h_a));
  const double nb = std::sqrt(dot(h_b, h_b));
  if (na < kDegenerateNorm || nb < kDegenerateNorm) degenerate(na, nb);
  const double cos = dot(h_a, h_b) / (na * nb);
  // d cos / d h_A = h_B/(|A||B|) − cos·h_A/|A|²
  grad_a.resize(h_a.size());
  grad_b.resize(h_b.size());
  for (std::size_t i = 0; i < h_a.size(); ++i) {
    grad_a[i] = -(h_b[i] / (na * nb) - cos * h_a[i] / (na * na));
    grad_b[i] = -(h_a[i] / (na * nb) - cos * h_b[i] / (nb * nb));
  }
  return 1.0 - cos;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    z += p[k];
  }
  for (auto& v : p) v /= z;
  return p;
}

double cross_entropy_from_logits(std::span<const double> logits, std::size_t target) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[target] - mx - std::log(z));
}

std::vector<double> attribution_logits(const BackwardHead& head, std::span<const double> h) {
  const std::size_t k = head.num_classes();
  std::vector<double> out(head.bias.data.begin(), head.bias.data.end());
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) out[c] += head.attribution_matrix.at(i, c) * h[i];
  }
  return out;
}

double backward_loss(const BackwardHead& head, std::span<const double> h_b, int true_expert) {
  const std::size_t cls = head.class_of(true_expert);
  return cross_entropy_from_logits(attribution_logits(head, h_b), cls);
}

double combined_loss(std::span<const ExampleLoss> batch, double lambda) {
  if (batch.empty()) throw Error(ErrorCode::InvalidConfig, "combined_loss needs a nonempty batch");
  double fwd = 0.0;
  double bwd = 0.0;
  for (const auto& l : batch) {
    fwd += l.forward;
    bwd += l.backward;
  }
  const auto n = static_cast<double>(batch.size());
  return fwd / n + lambda * (bwd / n);
}

namespace {

ScorerTrace prior_trace(const IcmModel& model, const FeatureVector& story, const FeatureVector& question,
                        int expert_id, const ForwardOptions& options) {
  if (model.config.state_a == PriorConditioning::None) {
    return forward_unconditioned(model.scorer, story, question, options);
  }
  return forward_state_a(model.scorer, story, question, expert_id, options);
}

}  // namespace

ExampleLoss icm_example_loss(const IcmModel& model, const FeatureVector& story, const FeatureVector& question,
                             const FeatureVector& explanation, int expert_id, IcmModel* grads,
                             const ForwardOptions& options) {
  const std::size_t cls = model.head.class_of(expert_id);
  const auto trace_a = prior_trace(model, story, question, expert_id, options);
  const auto trace_b = forward_state_b(model.scorer, story, question, explanation, options);
  const auto& h_a = trace_a.trunk.representation;
  const auto& h_b = trace_b.trunk.representation;

  ExampleLoss loss;
  std::vector<double> g_a(h_a.size(), 0.0);
  std::vector<double> g_b(h_b.size(), 0.0);
  if (model.config.forward_loss_space == ForwardLossSpace::Repr) {
    loss.forward = forward_loss_with_grad(h_a, h_b, g_a, g_b);
  } else {
    // Cosine over two scalars is 1 − sign(s_A·s_B); its gradient is zero.
    const double sa = trace_a.logit;
    const double sb = trace_b.logit;
    if (std::abs(sa) < kDegenerateNorm || std::abs(sb) < kDegenerateNorm) degenerate(std::abs(sa), std::abs(sb));
    loss.forward = 1.0 - (sa * sb) / (std::abs(sa) * std::abs(sb));
  }

  // Backward (attribution) model.
  std::optional<TrunkTrace> attr_trace;
  std::span<const double> h_attr = h_b;
  if (model.head.encoder) {
    const std::array<const FeatureVector*, 3> parts{&story, &question, &explanation};
    attr_trace = trunk_forward(*model.head.encoder, combine_inputs(story.dim, parts), options);
    h_attr = attr_trace->representation;
  }
  const auto logits = attribution_logits(model.head, h_attr);
  loss.backward = cross_entropy_from_logits(logits, cls);

  if (grads == nullptr) return loss;

  const double lambda = model.config.lambda;
  std::vector<double> g_attr(h_attr.size(), 0.0);
  if (lambda > 0.0) {
    auto p = softmax(logits);
    p[cls] -= 1.0;
    for (auto& v : p) v *= lambda;
    const std::size_t k = p.size();
    for (std::size_t i = 0; i < h_attr.size(); ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        grads->head.attribution_matrix.at(i, c) += h_attr[i] * p[c];
        acc += model.head.attribution_matrix.at(i, c) * p[c];
      }
      g_attr[i] = acc;
    }
    for (std::size_t c = 0; c < k; ++c) grads->head.bias.data[c] += p[c];
  }
  if (model.head.encoder) {
    if (lambda > 0.0) trunk_backward(*model.head.encoder, *attr_trace, g_attr, *grads->head.encoder);
  } else {
    for (std::size_t i = 0; i < g_b.size(); ++i) g_b[i] += g_attr[i];
  }
  scorer_backward(model.scorer, trace_a, g_a, 0.0, grads->scorer);
  scorer_backward(model.scorer, trace_b, g_b, 0.0, grads->scorer);
  return loss;
}

// ---------------------------------------------------------------------------
// Training

IcmTrainResult train_icm(const Corpus& corpus, const CorpusFeatures& features,
                         std::span<const std::size_t> train_indices, const EncoderConfig& encoder,
                         const ICMConfig& config, std::uint64_t seed) {
  validate(config);
  if (train_indices.empty()) throw Error(ErrorCode::InvalidConfig, "train_icm: empty training split");
  const auto& examples = corpus.examples();
  std::vector<int> ids;
  for (const auto i : train_indices) {
    const auto& a = examples.at(i).annotation;
    if (is_expert_id(a.expert_id) && a.explanation.empty()) {
      throw Error(ErrorCode::MalformedRecord, "train_icm: example " + corpus.example_key(i) + " lacks an explanation");
    }
    ids.push_back(a.expert_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  IcmTrainResult result;
  auto& model = result.model;
  model.config = config;
  model.scorer = init_scorer(encoder, ids, derive_seed(seed, 1));
  model.head = make_backward_head(encoder.repr_dim, ids);
  if (config.attribution_input == AttributionInput::Separate) {
    Rng rng(derive_seed(seed, 2));
    model.head.encoder = make_trunk(encoder, "attribution.", rng);
  }

  // Phase 1: fit the logit head to verdicts on both pathways.
  if (config.prior_epochs > 0) {
    auto prior_cfg = config.prior_optimizer;
    prior_cfg.epochs = config.prior_epochs;
    Trainer<ScorerParams> trainer(model.scorer, prior_cfg, train_indices.size());
    Rng dropout_rng(derive_seed(seed, 3));
    for (int epoch = 0; epoch < config.prior_epochs; ++epoch) {
      const auto order = epoch_order(train_indices, derive_seed(seed, 4), epoch);
      const double loss = train_epoch(trainer, order, [&](std::size_t i, ScorerParams& g) {
        const auto& ex = examples[i];
        const double y = verdict_label(ex.annotation.verdict);
        const ForwardOptions opt{true, &dropout_rng};
        const auto a = prior_trace(model, features.story(i), features.question(i), ex.annotation.expert_id, opt);
        const auto b = forward_state_b(model.scorer, features.story(i), features.question(i),
                                       features.explanation(i), opt);
        scorer_backward(model.scorer, a, {}, sigmoid(a.logit) - y, g);
        scorer_backward(model.scorer, b, {}, sigmoid(b.logit) - y, g);
        return softplus(a.logit) - y * a.logit + softplus(b.logit) - y * b.logit;
      });
      result.log.push_back({"prior", epoch, loss, 0.0, 0.0, 0.0});
    }
  }

  // Phase 2: curiosity objective, optionally through low-rank adapters.
  if (config.adapters.enabled) {
    apply_low_rank_adapters(model.scorer, config.adapters.rank, config.adapters.alpha, config.adapters.dropout,
                            derive_seed(seed, 5));
  }
  Trainer<IcmModel> trainer(model, config.optimizer, train_indices.size());
  Rng dropout_rng(derive_seed(seed, 6));
  for (int epoch = 0; epoch < config.optimizer.epochs; ++epoch) {
    const auto order = epoch_order(train_indices, derive_seed(seed, 7), epoch);
    double fwd = 0.0;
    double bwd = 0.0;
    const double loss = train_epoch(trainer, order, [&](std::size_t i, IcmModel& g) {
      const auto& ex = examples[i];
      const ForwardOptions opt{true, &dropout_rng};
      const auto l = icm_example_loss(model, features.story(i), features.question(i), features.explanation(i),
                                      ex.annotation.expert_id, &g, opt);
      fwd += l.forward;
      bwd += l.backward;
      const std::array<ExampleLoss, 1> one{l};
      return combined_loss(one, config.lambda);
    });
    const auto n = static_cast<double>(order.size());
    result.log.push_back(
        {"curiosity", epoch, loss, fwd / n, bwd / n, attribution_accuracy(model, corpus, features, order)});
  }
  if (!all_finite(model)) throw Error(ErrorCode::NonFiniteGradient, "ICM parameters are not finite after training");
  return result;
}

double attribution_accuracy(const IcmModel& model, const Corpus& corpus, const CorpusFeatures& features,
                            std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto i : indices) {
    const auto& ex = corpus.examples().at(i);
    std::vector<double> h;
    if (model.head.encoder) {
      const std::array<const FeatureVector*, 3> parts{&features.story(i), &features.question(i),
                                                      &features.explanation(i)};
      h = trunk_forward(*model.head.encoder, combine_inputs(model.scorer.config.features.dim, parts)).representation;
    } else {
      h = forward_state_b(model.scorer, features.story(i), features.question(i), features.explanation(i))
              .trunk.representation;
    }
    const auto logits = attribution_logits(model.head, h);
    const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const auto it = std::find(model.head.annotator_ids.begin(), model.head.annotator_ids.end(),
                              ex.annotation.expert_id);
    if (it != model.head.annotator_ids.end() &&
        best == static_cast<std::size_t>(it - model.head.annotator_ids.begin())) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// Curiosity

namespace {

CuriosityRecord make_record(const ScorerTrace& a, const ScorerTrace& b, int expert_id) {
  CuriosityRecord r;
  r.expert_id = expert_id;
  r.h_a = a.trunk.representation;
  r.h_b = b.trunk.representation;
  r.s_a = a.logit;
  r.s_b = b.logit;
  r.score = r.s_b - r.s_a;
  return r;
}

}  // namespace

CuriosityRecord curiosity_score(const IcmModel& model, const FeatureVector& story, const FeatureVector& question,
                                const FeatureVector& explanation, int expert_id) {
  const auto a = prior_trace(model, story, question, expert_id, {});
  // State A validates the id even for the unconditioned variant.
  (void)model.scorer.expert_row(expert_id);
  const auto b = forward_state_b(model.scorer, story, question, explanation);
  return make_record(a, b, expert_id);
}

CuriosityRecord curiosity_score(const IcmModel& model, const Story& story, Dimension question,
                                std::string_view explanation, int expert_id) {
  const auto& fc = model.scorer.config.features;
  auto r = curiosity_score(model, featurize(story.text, fc), featurize(question_text(question), fc),
                           featurize(explanation, fc), expert_id);
  r.story_id = story.id;
  r.dimension = question;
  return r;
}

CuriosityRecord curiosity_score_expert_prior(const IcmModel& model, const FeatureVector& story,
                                             const FeatureVector& question, int expert_id) {
  const auto a = forward_unconditioned(model.scorer, story, question);
  const auto b = forward_state_a(model.scorer, story, question, expert_id);
  return make_record(a, b, expert_id);
}

std::string_view inference_mode_name(InferenceMode mode) noexcept {
  return mode == InferenceMode::ExplanationAvailable ? "explanation" : "expert-prior";
}

InferenceMode parse_inference_mode(std::string_view s) {
  if (s == "explanation" || s == "a") return InferenceMode::ExplanationAvailable;
  if (s == "expert-prior" || s == "b") return InferenceMode::ExpertPrior;
  throw Error(ErrorCode::InvalidConfig, "inference mode must be 'explanation' (a) or 'expert-prior' (b)");
}

std::vector<CuriosityRecord> score_examples(const IcmModel& model, const Corpus& corpus,
                                            const CorpusFeatures& features, std::span<const std::size_t> indices,
                                            InferenceMode mode) {
  std::vector<CuriosityRecord> out;
  out.reserve(indices.size());
  for (const auto i : indices) {
    const auto& ex = corpus.examples().at(i);
    auto r = mode == InferenceMode::ExplanationAvailable
                 ? curiosity_score(model, features.story(i), features.question(i), features.explanation(i),
                                   ex.annotation.expert_id)
                 : curiosity_score_expert_prior(model, features.story(i), features.question(i),
                                                ex.annotation.expert_id);
    r.example = i;
    r.story_id = corpus.story_of(ex).id;
    r.dimension = ex.dimension;
    out.push_back(std::move(r));
  }
  return out;
}

std::string curiosity_jsonl(std::span<const CuriosityRecord> records, const std::string& config_hash) {
  std::string out;
  for (const auto& r : records) {
    json j{{"story_id", r.story_id},
           {"dimension", dimension_name(r.dimension)},
           {"expert_id", r.expert_id},
           {"s_a", r.s_a},
           {"s_b", r.s_b},
           {"score", r.score},
           {"config_hash", config_hash}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string serialize_icm(const IcmModel& model, const std::string& config_hash) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["kind"] = "icm";
  j["config_hash"] = config_hash;
  j["encoder"] = encoder_config_to_json(model.scorer.config);
  j["icm"] = icm_config_to_json(model.config);
  j["annotator_ids"] = model.scorer.annotator_ids;
  j["scorer_layout"] = trunk_layout_to_json(model.scorer.trunk);
  j["attribution_layout"] = model.head.encoder ? trunk_layout_to_json(*model.head.encoder) : json(nullptr);
  j["tensors"] = tensors_to_json(model.tensors());
  return j.dump();
}

IcmModel parse_icm(std::string_view text, const std::string& expected_hash, bool force) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("ICM checkpoint: ") + e.what());
  }
  try {
    if (j.at("kind") != "icm") throw Error(ErrorCode::MalformedRecord, "checkpoint is not an ICM checkpoint");
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw Error(ErrorCode::MalformedRecord, "unsupported checkpoint format version");
    }
    const auto hash = j.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && hash != expected_hash && !force) {
      throw Error(ErrorCode::ConfigMismatch,
                  "checkpoint config hash " + hash + " does not match run config " + expected_hash + " (use --force)");
    }
    IcmModel model;
    const auto encoder = encoder_config_from_json(j.at("encoder"));
    model.config = icm_config_from_json(j.at("icm"));
    const auto ids = j.at("annotator_ids").get<std::vector<int>>();
    model.scorer = init_scorer(encoder, ids, 0);
    restore_trunk_layout(model.scorer.trunk, j.at("scorer_layout"));
    model.head = make_backward_head(encoder.repr_dim, ids);
    if (!j.at("attribution_layout").is_null()) {
      Rng rng(0);
      model.head.encoder = make_trunk(encoder, "attribution.", rng);
      restore_trunk_layout(*model.head.encoder, j.at("attribution_layout"));
    }
    tensors_from_json(j.at("tensors"), model.tensors());
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("ICM checkpoint: ") + e.what());
  }
}

}  // namespace curio
