#include "curio/encoder.hpp"
#include "json_field.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "curio/hash.hpp"

namespace curio {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Featurization

namespace {

// Byte length of the UTF-8 sequence starting with lead byte c; malformed
// leads count as one byte.
std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

}  // namespace

std::vector<double> FeatureVector::dense() const {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] = value[i];
  return out;
}

double FeatureVector::norm() const {
  double s = 0.0;
  for (double v : value) s += v * v;
  return std::sqrt(s);
}

std::uint32_t ngram_bucket(std::string_view utf8_gram, const FeaturizerConfig& config) {
  return static_cast<std::uint32_t>(fnv1a64(utf8_gram, config.hash_seed) % config.dim);
}

FeatureVector featurize(std::string_view text, const FeaturizerConfig& config) {
  FeatureVector fv;
  fv.dim = config.dim;
  const std::string lowered = ascii_lower(text);

  // Code-point boundaries (byte offsets), truncated to max_chars.
  std::vector<std::size_t> starts;
  for (std::size_t pos = 0; pos < lowered.size() && starts.size() < config.max_chars;) {
    starts.push_back(pos);
    const std::size_t len = utf8_length(static_cast<unsigned char>(lowered[pos]));
    pos = std::min(lowered.size(), pos + len);
  }
  if (starts.empty()) return fv;
  const std::size_t n_chars = starts.size();
  const std::size_t end_byte = [&] {
    const std::size_t last = starts.back();
    return std::min(lowered.size(), last + utf8_length(static_cast<unsigned char>(lowered[last])));
  }();
  const auto byte_at = [&](std::size_t char_index) { return char_index < n_chars ? starts[char_index] : end_byte; };

  std::map<std::uint32_t, double> counts;
  const std::string_view view(lowered);
  if (n_chars < static_cast<std::size_t>(config.min_n)) {
    counts[ngram_bucket(view.substr(0, end_byte), config)] += 1.0;
  } else {
    for (int n = config.min_n; n <= config.max_n; ++n) {
      const auto un = static_cast<std::size_t>(n);
      if (un > n_chars) break;
      for (std::size_t i = 0; i + un <= n_chars; ++i) {
        const std::size_t b = starts[i];
        counts[ngram_bucket(view.substr(b, byte_at(i + un) - b), config)] += 1.0;
      }
    }
  }

  double sq = 0.0;
  for (const auto& [_, c] : counts) sq += c * c;
  const double inv = 1.0 / std::sqrt(sq);
  fv.index.reserve(counts.size());
  fv.value.reserve(counts.size());
  for (const auto& [bucket, c] : counts) {
    fv.index.push_back(bucket);
    fv.value.push_back(c * inv);
  }
  return fv;
}

// ---------------------------------------------------------------------------
// Trunk

std::vector<Tensor*> Trunk::tensors() {
  std::vector<Tensor*> out{&input_projection, &input_bias};
  for (std::size_t l = 0; l < hidden_weights.size(); ++l) {
    out.push_back(&hidden_weights[l]);
    out.push_back(&hidden_biases[l]);
  }
  out.push_back(&representation_head);
  for (auto& slot : adapters) {
    if (slot) {
      out.push_back(&slot->a);
      out.push_back(&slot->b);
    }
  }
  return out;
}

std::vector<const Tensor*> Trunk::tensors() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<Trunk*>(this)->tensors()) out.push_back(t);
  return out;
}

bool Trunk::has_adapters() const {
  return std::any_of(adapters.begin(), adapters.end(), [](const auto& s) { return s.has_value(); });
}

namespace {

void fill_uniform(Tensor& t, double scale, Rng& rng) {
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
}

const Tensor& slot_matrix(const Trunk& trunk, std::size_t slot) {
  if (slot == 0) return trunk.input_projection;
  if (slot <= trunk.hidden_weights.size()) return trunk.hidden_weights[slot - 1];
  return trunk.representation_head;
}

// y[j] += scale · Σ_k proj[k]·B[k][j]
void add_adapter_output(const LowRankAdapter& ad, std::span<const double> proj, std::span<double> y) {
  const std::size_t r = ad.b.rows;
  const std::size_t n = ad.b.cols;
  for (std::size_t k = 0; k < r; ++k) {
    const double pk = ad.scale * proj[k];
    if (pk == 0.0) continue;
    const double* brow = ad.b.data.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += pk * brow[j];
  }
}

AdapterCache dense_adapter_forward(const LowRankAdapter& ad, std::span<const double> x, const ForwardOptions& opt) {
  AdapterCache cache;
  const std::size_t m = ad.a.rows;
  const std::size_t r = ad.a.cols;
  cache.mask.assign(m, 1.0);
  if (opt.training && ad.dropout > 0.0) {
    const double keep = 1.0 - ad.dropout;
    for (auto& mk : cache.mask) mk = opt.rng->uniform() < keep ? 1.0 / keep : 0.0;
  }
  cache.projected.assign(r, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i] * cache.mask[i];
    if (xi == 0.0) continue;
    const double* arow = ad.a.data.data() + i * r;
    for (std::size_t k = 0; k < r; ++k) cache.projected[k] += xi * arow[k];
  }
  return cache;
}

// Dense layer y = x·W (+ bias) (+ adapter). W is m×n.
std::vector<double> dense_layer(const Tensor& w, const Tensor* bias, std::span<const double> x) {
  const std::size_t m = w.rows;
  const std::size_t n = w.cols;
  std::vector<double> y(n, 0.0);
  if (bias != nullptr) std::copy(bias->data.begin(), bias->data.end(), y.begin());
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* wrow = w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xi * wrow[j];
  }
  return y;
}

// Backward for a dense layer with optional adapter. Returns dL/dx.
std::vector<double> dense_layer_backward(const Tensor& w, std::span<const double> x, std::span<const double> g,
                                         Tensor& gw, Tensor* gbias, const LowRankAdapter* ad,
                                         const AdapterCache* cache, LowRankAdapter* gad) {
  const std::size_t m = w.rows;
  const std::size_t n = w.cols;
  std::vector<double> gx(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* wrow = w.data.data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wrow[j] * g[j];
    gx[i] = acc;
  }
  if (w.trainable) {
    for (std::size_t i = 0; i < m; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      double* grow = gw.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) grow[j] += xi * g[j];
    }
  }
  if (gbias != nullptr && gbias->trainable) {
    for (std::size_t j = 0; j < n; ++j) gbias->data[j] += g[j];
  }
  if (ad != nullptr) {
    const std::size_t r = ad->a.cols;
    std::vector<double> u(r, 0.0);  // B·g
    for (std::size_t k = 0; k < r; ++k) {
      const double* brow = ad->b.data.data() + k * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += brow[j] * g[j];
      u[k] = acc;
    }
    for (std::size_t k = 0; k < r; ++k) {
      const double pk = ad->scale * cache->projected[k];
      double* gbrow = gad->b.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += pk * g[j];
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double mi = cache->mask[i];
      if (mi == 0.0) continue;
      const double* arow = ad->a.data.data() + i * r;
      double* garow = gad->a.data.data() + i * r;
      const double xi = ad->scale * mi * x[i];
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        garow[k] += xi * u[k];
        acc += arow[k] * u[k];
      }
      gx[i] += ad->scale * mi * acc;
    }
  }
  return gx;
}

}  // namespace

Trunk make_trunk(const EncoderConfig& config, const std::string& prefix, Rng& rng) {
  Trunk t;
  const std::size_t d = config.features.dim;
  const std::size_t h = config.hidden;
  t.input_projection = Tensor(prefix + "input_projection", d, h);
  t.input_bias = Tensor(prefix + "input_bias", 1, h);
  fill_uniform(t.input_projection, config.init_scale, rng);
  fill_uniform(t.input_bias, config.init_scale, rng);
  for (std::size_t l = 0; l < config.hidden_layers; ++l) {
    t.hidden_weights.emplace_back(prefix + "hidden." + std::to_string(l) + ".weight", h, h);
    t.hidden_biases.emplace_back(prefix + "hidden." + std::to_string(l) + ".bias", 1, h);
    fill_uniform(t.hidden_weights.back(), config.init_scale, rng);
    fill_uniform(t.hidden_biases.back(), config.init_scale, rng);
  }
  t.representation_head = Tensor(prefix + "representation_head", h, config.repr_dim);
  fill_uniform(t.representation_head, config.init_scale, rng);
  t.adapters.resize(config.hidden_layers + 2);
  return t;
}

TrunkInput combine_inputs(std::size_t dim, std::span<const FeatureVector* const> sparse,
                          std::span<const double> dense) {
  std::vector<double> acc(dim, 0.0);
  std::vector<char> touched(dim, 0);
  for (const auto* fv : sparse) {
    for (std::size_t i = 0; i < fv->index.size(); ++i) {
      acc[fv->index[i]] += fv->value[i];
      touched[fv->index[i]] = 1;
    }
  }
  if (!dense.empty()) {
    for (std::size_t i = 0; i < dim; ++i) {
      acc[i] += dense[i];
      touched[i] = 1;
    }
  }
  TrunkInput in;
  for (std::size_t i = 0; i < dim; ++i) {
    if (touched[i] != 0 && acc[i] != 0.0) {
      in.index.push_back(static_cast<std::uint32_t>(i));
      in.value.push_back(acc[i]);
    }
  }
  return in;
}

TrunkTrace trunk_forward(const Trunk& trunk, TrunkInput input, const ForwardOptions& options) {
  TrunkTrace trace;
  trace.input = std::move(input);
  const auto& in = trace.input;
  const std::size_t h = trunk.hidden_dim();
  trace.adapter_cache.resize(trunk.adapters.size());

  // Layer 0: sparse input projection.
  std::vector<double> pre(trunk.input_bias.data);
  for (std::size_t e = 0; e < in.index.size(); ++e) {
    const double xi = in.value[e];
    const double* wrow = trunk.input_projection.data.data() + static_cast<std::size_t>(in.index[e]) * h;
    for (std::size_t j = 0; j < h; ++j) pre[j] += xi * wrow[j];
  }
  if (!in.extra_hidden.empty()) {
    for (std::size_t j = 0; j < h; ++j) pre[j] += in.extra_hidden[j];
  }
  if (const auto& ad = trunk.adapters[0]) {
    auto& cache = trace.adapter_cache[0];
    const std::size_t r = ad->a.cols;
    cache.mask.assign(in.index.size(), 1.0);
    if (options.training && ad->dropout > 0.0) {
      const double keep = 1.0 - ad->dropout;
      for (auto& mk : cache.mask) mk = options.rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    cache.projected.assign(r, 0.0);
    for (std::size_t e = 0; e < in.index.size(); ++e) {
      const double xi = in.value[e] * cache.mask[e];
      if (xi == 0.0) continue;
      const double* arow = ad->a.data.data() + static_cast<std::size_t>(in.index[e]) * r;
      for (std::size_t k = 0; k < r; ++k) cache.projected[k] += xi * arow[k];
    }
    add_adapter_output(*ad, cache.projected, pre);
  }
  for (auto& v : pre) v = std::tanh(v);
  trace.activations.push_back(std::move(pre));

  for (std::size_t l = 0; l < trunk.hidden_weights.size(); ++l) {
    const auto& x = trace.activations.back();
    auto y = dense_layer(trunk.hidden_weights[l], &trunk.hidden_biases[l], x);
    if (const auto& ad = trunk.adapters[l + 1]) {
      trace.adapter_cache[l + 1] = dense_adapter_forward(*ad, x, options);
      add_adapter_output(*ad, trace.adapter_cache[l + 1].projected, y);
    }
    for (auto& v : y) v = std::tanh(v);
    trace.activations.push_back(std::move(y));
  }

  const std::size_t last = trunk.adapters.size() - 1;
  const auto& x = trace.activations.back();
  trace.representation = dense_layer(trunk.representation_head, nullptr, x);
  if (const auto& ad = trunk.adapters[last]) {
    trace.adapter_cache[last] = dense_adapter_forward(*ad, x, options);
    add_adapter_output(*ad, trace.adapter_cache[last].projected, trace.representation);
  }
  return trace;
}

void trunk_backward(const Trunk& trunk, const TrunkTrace& trace, std::span<const double> grad_repr, Trunk& grads,
                    std::vector<double>* grad_input, std::vector<double>* grad_extra) {
  const std::size_t n_hidden = trunk.hidden_weights.size();
  const std::size_t last = trunk.adapters.size() - 1;

  const auto adapter_ptrs = [&](std::size_t slot) {
    const LowRankAdapter* ad = trunk.adapters[slot] ? &*trunk.adapters[slot] : nullptr;
    LowRankAdapter* gad = grads.adapters[slot] ? &*grads.adapters[slot] : nullptr;
    return std::make_pair(ad, gad);
  };

  auto [ad_r, gad_r] = adapter_ptrs(last);
  std::vector<double> g = dense_layer_backward(trunk.representation_head, trace.activations.back(), grad_repr,
                                               grads.representation_head, nullptr, ad_r,
                                               &trace.adapter_cache[last], gad_r);

  for (std::size_t l = n_hidden; l-- > 0;) {
    const auto& act = trace.activations[l + 1];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] *= 1.0 - act[j] * act[j];
    auto [ad, gad] = adapter_ptrs(l + 1);
    g = dense_layer_backward(trunk.hidden_weights[l], trace.activations[l], g, grads.hidden_weights[l],
                             &grads.hidden_biases[l], ad, &trace.adapter_cache[l + 1], gad);
  }

  const auto& act0 = trace.activations[0];
  for (std::size_t j = 0; j < g.size(); ++j) g[j] *= 1.0 - act0[j] * act0[j];

  const std::size_t h = trunk.hidden_dim();
  const auto& in = trace.input;
  if (grads.input_bias.trainable) {
    for (std::size_t j = 0; j < h; ++j) grads.input_bias.data[j] += g[j];
  }
  if (trunk.input_projection.trainable) {
    for (std::size_t e = 0; e < in.index.size(); ++e) {
      const double xi = in.value[e];
      double* grow = grads.input_projection.data.data() + static_cast<std::size_t>(in.index[e]) * h;
      for (std::size_t j = 0; j < h; ++j) grow[j] += xi * g[j];
    }
  }
  auto [ad0, gad0] = adapter_ptrs(0);
  std::vector<double> u;  // B·g for the input adapter
  if (ad0 != nullptr) {
    const auto& cache = trace.adapter_cache[0];
    const std::size_t r = ad0->a.cols;
    u.assign(r, 0.0);
    for (std::size_t k = 0; k < r; ++k) {
      const double* brow = ad0->b.data.data() + k * h;
      double acc = 0.0;
      for (std::size_t j = 0; j < h; ++j) acc += brow[j] * g[j];
      u[k] = acc;
      const double pk = ad0->scale * cache.projected[k];
      double* gbrow = gad0->b.data.data() + k * h;
      for (std::size_t j = 0; j < h; ++j) gbrow[j] += pk * g[j];
    }
    for (std::size_t e = 0; e < in.index.size(); ++e) {
      const double xi = ad0->scale * cache.mask[e] * in.value[e];
      if (xi == 0.0) continue;
      double* garow = gad0->a.data.data() + static_cast<std::size_t>(in.index[e]) * r;
      for (std::size_t k = 0; k < r; ++k) garow[k] += xi * u[k];
    }
  }
  if (grad_extra != nullptr) grad_extra->assign(g.begin(), g.end());
  if (grad_input != nullptr) {
    const std::size_t d = trunk.input_dim();
    grad_input->assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      const double* wrow = trunk.input_projection.data.data() + i * h;
      double acc = 0.0;
      for (std::size_t j = 0; j < h; ++j) acc += wrow[j] * g[j];
      (*grad_input)[i] = acc;
    }
    if (ad0 != nullptr) {
      const auto& cache = trace.adapter_cache[0];
      const std::size_t r = ad0->a.cols;
      std::vector<double> mask(d, 1.0);
      for (std::size_t e = 0; e < in.index.size(); ++e) mask[in.index[e]] = cache.mask[e];
      for (std::size_t i = 0; i < d; ++i) {
        if (mask[i] == 0.0) continue;
        const double* arow = ad0->a.data.data() + i * r;
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += arow[k] * u[k];
        (*grad_input)[i] += ad0->scale * mask[i] * acc;
      }
    }
  }
}

void apply_low_rank_adapters(Trunk& trunk, int rank, double alpha, double dropout, Rng& rng) {
  const std::size_t n_slots = trunk.hidden_weights.size() + 2;
  if (rank < 1) throw Error(ErrorCode::RankTooLarge, "adapter rank must be >= 1");
  for (std::size_t s = 0; s < n_slots; ++s) {
    const auto& w = slot_matrix(trunk, s);
    if (static_cast<std::size_t>(rank) > std::min(w.rows, w.cols)) {
      throw Error(ErrorCode::RankTooLarge, "rank " + std::to_string(rank) + " exceeds min dimension of " + w.name +
                                               " (" + std::to_string(w.rows) + "x" + std::to_string(w.cols) + ")");
    }
  }
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "adapter dropout must be in [0,1)");
  trunk.adapters.resize(n_slots);
  const auto r = static_cast<std::size_t>(rank);
  for (std::size_t s = 0; s < n_slots; ++s) {
    const auto& w = slot_matrix(trunk, s);
    LowRankAdapter ad;
    ad.a = Tensor(w.name + ".adapter_a", w.rows, r);
    ad.b = Tensor(w.name + ".adapter_b", r, w.cols);
    fill_uniform(ad.b, 1.0 / std::sqrt(static_cast<double>(w.cols)), rng);
    ad.scale = alpha / static_cast<double>(rank);
    ad.dropout = dropout;
    trunk.adapters[s] = std::move(ad);
  }
  trunk.input_projection.trainable = false;
  trunk.input_bias.trainable = false;
  for (auto& t : trunk.hidden_weights) t.trainable = false;
  for (auto& t : trunk.hidden_biases) t.trainable = false;
  trunk.representation_head.trainable = false;
}

Tensor effective_weight(const Trunk& trunk, std::size_t slot) {
  Tensor w = slot_matrix(trunk, slot);
  if (slot >= trunk.adapters.size() || !trunk.adapters[slot]) return w;
  const auto& ad = *trunk.adapters[slot];
  for (std::size_t i = 0; i < w.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ad.a.cols; ++k) acc += ad.a.at(i, k) * ad.b.at(k, j);
      w.at(i, j) += ad.scale * acc;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Scorer

std::vector<Tensor*> ScorerParams::tensors() {
  auto out = trunk.tensors();
  out.push_back(&expert_embedding);
  out.push_back(&logit_weight);
  out.push_back(&logit_bias);
  return out;
}

std::vector<const Tensor*> ScorerParams::tensors() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<ScorerParams*>(this)->tensors()) out.push_back(t);
  return out;
}

std::size_t ScorerParams::expert_row(int expert_id) const {
  const auto it = std::find(annotator_ids.begin(), annotator_ids.end(), expert_id);
  if (it == annotator_ids.end()) {
    throw Error(ErrorCode::UnknownExpert, "annotator id " + std::to_string(expert_id) + " is not known to the model");
  }
  return static_cast<std::size_t>(it - annotator_ids.begin());
}

ScorerParams init_scorer(const EncoderConfig& config, std::vector<int> annotator_ids, std::uint64_t seed) {
  Rng rng(seed);
  ScorerParams p;
  p.config = config;
  p.trunk = make_trunk(config, "scorer.", rng);
  p.annotator_ids = std::move(annotator_ids);
  p.expert_embedding = Tensor("scorer.expert_embedding", p.annotator_ids.size(), config.features.dim);
  fill_uniform(p.expert_embedding, config.init_scale, rng);
  p.logit_weight = Tensor("scorer.logit_weight", 1, config.repr_dim);
  fill_uniform(p.logit_weight, config.init_scale, rng);
  p.logit_bias = Tensor("scorer.logit_bias", 1, 1);
  return p;
}

namespace {

double logit_of(const ScorerParams& params, std::span<const double> repr) {
  double s = params.logit_bias.data[0];
  for (std::size_t j = 0; j < repr.size(); ++j) s += params.logit_weight.data[j] * repr[j];
  return s;
}

ScorerTrace run_scorer(const ScorerParams& params, TrunkInput input, std::optional<std::size_t> expert_row,
                       const ForwardOptions& options) {
  ScorerTrace trace;
  trace.trunk = trunk_forward(params.trunk, std::move(input), options);
  trace.expert_row = expert_row;
  trace.logit = logit_of(params, trace.trunk.representation);
  return trace;
}

}  // namespace

ScorerTrace forward_state_a(const ScorerParams& params, const FeatureVector& story, const FeatureVector& question,
                            int expert_id, const ForwardOptions& options) {
  const std::size_t row = params.expert_row(expert_id);
  const std::array<const FeatureVector*, 2> parts{&story, &question};
  return run_scorer(params,
                    combine_inputs(params.config.features.dim, parts, params.expert_embedding.row(row)), row,
                    options);
}

ScorerTrace forward_state_b(const ScorerParams& params, const FeatureVector& story, const FeatureVector& question,
                            const FeatureVector& explanation, const ForwardOptions& options) {
  const std::array<const FeatureVector*, 3> parts{&story, &question, &explanation};
  return run_scorer(params, combine_inputs(params.config.features.dim, parts), std::nullopt, options);
}

ScorerTrace forward_unconditioned(const ScorerParams& params, const FeatureVector& story,
                                  const FeatureVector& question, const ForwardOptions& options) {
  const std::array<const FeatureVector*, 2> parts{&story, &question};
  return run_scorer(params, combine_inputs(params.config.features.dim, parts), std::nullopt, options);
}

void scorer_backward(const ScorerParams& params, const ScorerTrace& trace, std::span<const double> grad_repr,
                     double grad_logit, ScorerParams& grads) {
  const auto& repr = trace.trunk.representation;
  std::vector<double> g(repr.size(), 0.0);
  for (std::size_t j = 0; j < repr.size(); ++j) {
    g[j] = (grad_repr.empty() ? 0.0 : grad_repr[j]) + grad_logit * params.logit_weight.data[j];
  }
  if (params.logit_weight.trainable) {
    for (std::size_t j = 0; j < repr.size(); ++j) grads.logit_weight.data[j] += grad_logit * repr[j];
  }
  if (params.logit_bias.trainable) grads.logit_bias.data[0] += grad_logit;

  const bool want_input = trace.expert_row.has_value() && params.expert_embedding.trainable;
  std::vector<double> grad_input;
  trunk_backward(params.trunk, trace.trunk, g, grads.trunk, want_input ? &grad_input : nullptr);
  if (want_input) {
    auto row = grads.expert_embedding.row(*trace.expert_row);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += grad_input[i];
  }
}

ScorerOutput score_state_a(const ScorerParams& params, const Story& story, Dimension question, int expert_id) {
  const auto& fc = params.config.features;
  return to_output(forward_state_a(params, featurize(story.text, fc), featurize(question_text(question), fc),
                                   expert_id));
}

ScorerOutput score_state_b(const ScorerParams& params, const Story& story, Dimension question,
                           std::string_view explanation) {
  const auto& fc = params.config.features;
  return to_output(forward_state_b(params, featurize(story.text, fc), featurize(question_text(question), fc),
                                   featurize(explanation, fc)));
}

void apply_low_rank_adapters(ScorerParams& params, int rank, double alpha, double dropout, std::uint64_t seed) {
  Rng rng(seed);
  apply_low_rank_adapters(params.trunk, rank, alpha, dropout, rng);
  params.expert_embedding.trainable = false;
  params.logit_weight.trainable = false;
  params.logit_bias.trainable = false;
}

// ---------------------------------------------------------------------------
// Feature cache

CorpusFeatures::CorpusFeatures(const Corpus& corpus, const FeaturizerConfig& config) : corpus_(&corpus) {
  stories_.reserve(corpus.stories().size());
  for (const auto& s : corpus.stories()) stories_.push_back(featurize(s.text, config));
  for (const auto d : kAllDimensions) questions_.push_back(featurize(question_text(d), config));
  explanations_.reserve(corpus.examples().size());
  for (const auto& ex : corpus.examples()) explanations_.push_back(featurize(ex.annotation.explanation, config));
}

const FeatureVector& CorpusFeatures::story(std::size_t example) const {
  return stories_.at(corpus_->examples().at(example).story_index);
}

const FeatureVector& CorpusFeatures::question(std::size_t example) const {
  return questions_.at(static_cast<std::size_t>(corpus_->examples().at(example).dimension));
}

const FeatureVector& CorpusFeatures::explanation(std::size_t example) const { return explanations_.at(example); }

// ---------------------------------------------------------------------------
// Serialization

json encoder_config_to_json(const EncoderConfig& c) {
  return {{"feature_dim", c.features.dim},       {"max_chars", c.features.max_chars},
          {"hash_seed", c.features.hash_seed},   {"min_n", c.features.min_n},
          {"max_n", c.features.max_n},           {"hidden", c.hidden},
          {"hidden_layers", c.hidden_layers},    {"repr_dim", c.repr_dim},
          {"init_scale", c.init_scale}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  detail::reject_unknown(j, encoder_config_to_json(c), ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "feature_dim", c.features.dim, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "max_chars", c.features.max_chars, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "hash_seed", c.features.hash_seed, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "min_n", c.features.min_n, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "max_n", c.features.max_n, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "hidden", c.hidden, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "hidden_layers", c.hidden_layers, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "repr_dim", c.repr_dim, ErrorCode::InvalidConfig, "encoder");
  detail::read_field(j, "init_scale", c.init_scale, ErrorCode::InvalidConfig, "encoder");
  if (c.features.dim == 0 || c.hidden == 0 || c.repr_dim == 0 || c.features.min_n < 1 ||
      c.features.max_n < c.features.min_n) {
    throw Error(ErrorCode::InvalidConfig, "encoder: dimensions must be positive and min_n <= max_n");
  }
  return c;
}

json adapter_config_to_json(const AdapterConfig& c) {
  return {{"enabled", c.enabled}, {"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}};
}

AdapterConfig adapter_config_from_json(const json& j) {
  AdapterConfig c;
  detail::reject_unknown(j, adapter_config_to_json(c), ErrorCode::InvalidConfig, "adapters");
  detail::read_field(j, "enabled", c.enabled, ErrorCode::InvalidConfig, "adapters");
  detail::read_field(j, "rank", c.rank, ErrorCode::InvalidConfig, "adapters");
  detail::read_field(j, "alpha", c.alpha, ErrorCode::InvalidConfig, "adapters");
  detail::read_field(j, "dropout", c.dropout, ErrorCode::InvalidConfig, "adapters");
  return c;
}

json tensors_to_json(const std::vector<const Tensor*>& tensors) {
  json arr = json::array();
  for (const auto* t : tensors) {
    arr.push_back({{"name", t->name}, {"rows", t->rows}, {"cols", t->cols}, {"trainable", t->trainable},
                   {"data", t->data}});
  }
  return arr;
}

void tensors_from_json(const json& j, const std::vector<Tensor*>& tensors) {
  std::map<std::string, const json*> by_name;
  for (const auto& item : j) by_name[item.at("name").get<std::string>()] = &item;
  for (auto* t : tensors) {
    const auto it = by_name.find(t->name);
    if (it == by_name.end()) throw Error(ErrorCode::MalformedRecord, "checkpoint lacks tensor " + t->name);
    const auto& item = *it->second;
    const auto rows = item.at("rows").get<std::size_t>();
    const auto cols = item.at("cols").get<std::size_t>();
    if (rows != t->rows || cols != t->cols) {
      throw Error(ErrorCode::ConfigMismatch, "shape mismatch for " + t->name);
    }
    t->data = item.at("data").get<std::vector<double>>();
    if (t->data.size() != rows * cols) throw Error(ErrorCode::MalformedRecord, "bad data length for " + t->name);
    t->trainable = item.value("trainable", true);
  }
}

json trunk_layout_to_json(const Trunk& trunk) {
  json slots = json::array();
  for (const auto& s : trunk.adapters) {
    if (s) {
      slots.push_back({{"rank", s->a.cols}, {"scale", s->scale}, {"dropout", s->dropout}});
    } else {
      slots.push_back(nullptr);
    }
  }
  return {{"hidden_layers", trunk.hidden_weights.size()}, {"adapters", slots}};
}

void restore_trunk_layout(Trunk& trunk, const json& layout) {
  const auto& slots = layout.at("adapters");
  trunk.adapters.assign(slots.size(), std::nullopt);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s].is_null()) continue;
    const auto& w = slot_matrix(trunk, s);
    const auto r = slots[s].at("rank").get<std::size_t>();
    LowRankAdapter ad;
    ad.a = Tensor(w.name + ".adapter_a", w.rows, r);
    ad.b = Tensor(w.name + ".adapter_b", r, w.cols);
    ad.scale = slots[s].at("scale").get<double>();
    ad.dropout = slots[s].at("dropout").get<double>();
    trunk.adapters[s] = std::move(ad);
  }
}

}  // namespace curio
