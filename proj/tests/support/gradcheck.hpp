#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "curio/tensor.hpp"

namespace gradcheck {

inline constexpr double kEpsilon = 1e-4;
// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kScaleFloor = 1e-5;

struct Result {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kScaleFloor});
}

/// Compares analytic gradients against central differences of loss(params)
/// for every trainable coordinate (every stride-th one for large tensors).
template <curio::ParameterSet P, typename LossFn>
Result check(P& params, const P& analytic, LossFn&& loss, std::size_t max_per_tensor = 400) {
  Result r;
  auto ps = params.tensors();
  const auto gs = analytic.tensors();
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (!ps[t]->trainable) continue;
    auto& data = ps[t]->data;
    const std::size_t stride = std::max<std::size_t>(1, data.size() / max_per_tensor);
    for (std::size_t k = 0; k < data.size(); k += stride) {
      const double saved = data[k];
      data[k] = saved + kEpsilon;
      const double up = loss(params);
      data[k] = saved - kEpsilon;
      const double down = loss(params);
      data[k] = saved;
      const double numeric = (up - down) / (2.0 * kEpsilon);
      const double err = relative_error(gs[t]->data[k], numeric);
      ++r.checked;
      if (err > r.max_relative_error) {
        r.max_relative_error = err;
        r.worst = ps[t]->name + "[" + std::to_string(k) + "] analytic " + std::to_string(gs[t]->data[k]) +
                  " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace gradcheck
