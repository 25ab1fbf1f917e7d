#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "curio/errors.hpp"
#include "curio/random.hpp"
#include "curio/tensor.hpp"

namespace curio {

/// Defaults follow the core hyperparameter table (batch 4, accumulation 8,
/// 3 epochs, cosine schedule with 10% warmup, weight decay 0.01, gradient
/// clipping at 0.5, seed 42). The learning rate is not given there; 1e-3
/// suits the small MLPs used here.
struct OptimizerConfig {
  double base_lr = 1e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double max_grad_norm = 0.5;
  int batch_size = 4;
  int grad_accum_steps = 8;
  int epochs = 3;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

void validate(const OptimizerConfig& config);
nlohmann::json optimizer_config_to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, const OptimizerConfig& defaults = {});

/// Warmup steps: ceil(warmup_ratio · total_steps).
std::size_t warmup_steps(std::size_t total_steps, const OptimizerConfig& config);

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, std::size_t total_steps, const OptimizerConfig& config);

/// epochs · ceil(train_size / (batch_size · grad_accum_steps)).
std::size_t total_steps(std::size_t train_size, const OptimizerConfig& config);

template <ParameterSet P>
double global_grad_norm(const P& grads) {
  double s = 0.0;
  for (const auto* t : grads.tensors()) {
    if (!t->trainable) continue;
    for (double v : t->data) s += v * v;
  }
  return std::sqrt(s);
}

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
template <ParameterSet P>
double clip_gradients(P& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (!std::isfinite(norm)) throw Error(ErrorCode::NonFiniteGradient, "gradient norm is not finite");
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto* t : grads.tensors()) {
      for (auto& v : t->data) v *= scale;
    }
  }
  return norm;
}

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t updates = 0;
};

/// One AdamW update (decoupled weight decay) at learning rate lr. Frozen
/// tensors are left untouched.
template <ParameterSet P>
void adamw_step(P& params, const P& grads, AdamState& state, const OptimizerConfig& config, double lr) {
  auto ps = params.tensors();
  const auto gs = grads.tensors();
  if (state.first.size() != ps.size()) {
    state.first.assign(ps.size(), {});
    state.second.assign(ps.size(), {});
  }
  state.updates += 1;
  const double t = static_cast<double>(state.updates);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i]->data;
    const auto& g = gs[i]->data;
    if (!ps[i]->trainable) continue;
    if (g.size() != p.size()) throw Error(ErrorCode::InvalidConfig, "gradient shape mismatch for " + ps[i]->name);
    auto& m = state.first[i];
    auto& v = state.second[i];
    if (m.size() != p.size()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    const double decay = 1.0 - lr * config.weight_decay;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (!std::isfinite(g[k])) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient in " + ps[i]->name);
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      p[k] *= decay;
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config.epsilon);
    }
  }
  if (!all_finite(params)) throw Error(ErrorCode::NonFiniteGradient, "parameters became non-finite after update");
}

/// Gradient accumulation driver. Callers add per-example gradients into
/// grads() and call end_micro_batch() after every batch_size examples. Every
/// grad_accum_steps micro-batches the accumulated sum is averaged over the
/// examples seen, clipped, and applied. flush() applies a partial window.
template <ParameterSet P>
class Trainer {
 public:
  Trainer(P& params, const OptimizerConfig& config, std::size_t train_size)
      : params_(&params),
        config_(config),
        grads_(zeros_like(params)),
        total_steps_(curio::total_steps(train_size, config)) {
    validate(config);
  }

  P& grads() noexcept { return grads_; }
  void count_example() noexcept { ++examples_in_window_; }

  void end_micro_batch() {
    if (++micro_batches_ >= static_cast<std::size_t>(config_.grad_accum_steps)) apply();
  }

  void flush() {
    if (examples_in_window_ > 0) apply();
  }

  [[nodiscard]] const OptimizerConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::size_t steps_taken() const noexcept { return steps_; }
  [[nodiscard]] std::size_t total_steps() const noexcept { return total_steps_; }
  [[nodiscard]] const std::vector<double>& grad_norms() const noexcept { return grad_norms_; }

 private:
  void apply() {
    if (examples_in_window_ > 0) {
      const double inv = 1.0 / static_cast<double>(examples_in_window_);
      for (auto* t : grads_.tensors()) {
        for (auto& v : t->data) v *= inv;
      }
      grad_norms_.push_back(clip_gradients(grads_, config_.max_grad_norm));
      const double lr = lr_at(std::min(steps_, total_steps_), std::max<std::size_t>(total_steps_, 1), config_);
      adamw_step(*params_, grads_, state_, config_, lr);
      ++steps_;
    }
    zero_all(grads_);
    micro_batches_ = 0;
    examples_in_window_ = 0;
  }

  P* params_;
  OptimizerConfig config_;
  P grads_;
  AdamState state_;
  std::size_t total_steps_;
  std::size_t steps_ = 0;
  std::size_t micro_batches_ = 0;
  std::size_t examples_in_window_ = 0;
  std::vector<double> grad_norms_;
};

/// Training indices in a per-epoch shuffled order.
inline std::vector<std::size_t> epoch_order(std::span<const std::size_t> train, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(train.begin(), train.end());
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

/// One pass over order. fn(i, grads) returns the loss of example i and adds
/// its gradient into grads. Returns the mean loss.
template <ParameterSet P, typename Fn>
double train_epoch(Trainer<P>& trainer, std::span<const std::size_t> order, Fn&& fn) {
  double total = 0.0;
  std::size_t in_batch = 0;
  const auto batch = static_cast<std::size_t>(trainer.config().batch_size);
  for (const auto idx : order) {
    total += fn(idx, trainer.grads());
    trainer.count_example();
    if (++in_batch == batch) {
      trainer.end_micro_batch();
      in_batch = 0;
    }
  }
  if (in_batch > 0) trainer.end_micro_batch();
  trainer.flush();
  return order.empty() ? 0.0 : total / static_cast<double>(order.size());
}

}  // namespace curio
