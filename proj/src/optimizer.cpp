#include "curio/optimizer.hpp"
#include "json_field.hpp"

#include <algorithm>
#include <cmath>


namespace curio {

void validate(const OptimizerConfig& c) {
  if (!(c.base_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.base_lr must be positive");
  if (c.warmup_ratio < 0.0 || c.warmup_ratio >= 1.0) {
    throw Error(ErrorCode::InvalidConfig, "optimizer.warmup_ratio must be in [0,1)");
  }
  if (c.weight_decay < 0.0) throw Error(ErrorCode::InvalidConfig, "optimizer.weight_decay must be >= 0");
  if (!(c.max_grad_norm > 0.0)) throw Error(ErrorCode::InvalidConfig, "optimizer.max_grad_norm must be positive");
  if (c.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "optimizer.batch_size must be >= 1");
  if (c.grad_accum_steps < 1) throw Error(ErrorCode::InvalidConfig, "optimizer.grad_accum_steps must be >= 1");
  if (c.epochs < 0) throw Error(ErrorCode::InvalidConfig, "optimizer.epochs must be >= 0");
}

nlohmann::json optimizer_config_to_json(const OptimizerConfig& c) {
  return {{"base_lr", c.base_lr},          {"warmup_ratio", c.warmup_ratio},
          {"weight_decay", c.weight_decay}, {"max_grad_norm", c.max_grad_norm},
          {"batch_size", c.batch_size},     {"grad_accum_steps", c.grad_accum_steps},
          {"epochs", c.epochs},             {"seed", c.seed},
          {"beta1", c.beta1},               {"beta2", c.beta2},
          {"epsilon", c.epsilon},           {"update_rule", "adamw"}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, const OptimizerConfig& d) {
  OptimizerConfig c = d;
  detail::reject_unknown(j, optimizer_config_to_json(d), ErrorCode::InvalidConfig, "optimizer");
  if (j.contains("update_rule") && j.at("update_rule") != "adamw") {
    throw Error(ErrorCode::InvalidConfig, "optimizer.update_rule: only adamw is supported");
  }
  detail::read_field(j, "base_lr", c.base_lr, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "warmup_ratio", c.warmup_ratio, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "weight_decay", c.weight_decay, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "max_grad_norm", c.max_grad_norm, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "batch_size", c.batch_size, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "grad_accum_steps", c.grad_accum_steps, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "epochs", c.epochs, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "seed", c.seed, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "beta1", c.beta1, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "beta2", c.beta2, ErrorCode::InvalidConfig, "optimizer");
  detail::read_field(j, "epsilon", c.epsilon, ErrorCode::InvalidConfig, "optimizer");
  validate(c);
  return c;
}

std::size_t warmup_steps(std::size_t total_steps, const OptimizerConfig& config) {
  return static_cast<std::size_t>(std::ceil(config.warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, std::size_t total, const OptimizerConfig& config) {
  const std::size_t warm = warmup_steps(total, config);
  if (step < warm) return config.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total <= warm) return config.base_lr;
  const double progress = static_cast<double>(std::min(step, total) - warm) / static_cast<double>(total - warm);
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t total_steps(std::size_t train_size, const OptimizerConfig& config) {
  const std::size_t window = static_cast<std::size_t>(config.batch_size) * static_cast<std::size_t>(config.grad_accum_steps);
  const std::size_t per_epoch = (train_size + window - 1) / window;
  return static_cast<std::size_t>(config.epochs) * per_epoch;
}

}  // namespace curio
