#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace curio {

/// Named row-major parameter block. Vectors are 1×n.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  bool trainable = true;

  Tensor() = default;
  Tensor(std::string n, std::size_t r, std::size_t c, double fill = 0.0)
      : name(std::move(n)), rows(r), cols(c), data(r * c, fill) {}

  [[nodiscard]] double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  [[nodiscard]] std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  [[nodiscard]] std::size_t size() const noexcept { return data.size(); }

  [[nodiscard]] Tensor zeros_like() const {
    Tensor t(name, rows, cols);
    t.trainable = trainable;
    return t;
  }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool operator==(const Tensor&) const = default;
};

/// Anything exposing its parameter blocks in a fixed order. Gradients use the
/// same type as the parameters, so tensors() of both line up index by index.
template <typename T>
concept ParameterSet = requires(T& t, const T& ct) {
  { t.tensors() } -> std::same_as<std::vector<Tensor*>>;
  { ct.tensors() } -> std::same_as<std::vector<const Tensor*>>;
};

template <ParameterSet P>
P zeros_like(const P& params) {
  P out = params;
  for (auto* t : out.tensors()) t->zero();
  return out;
}

template <ParameterSet P>
void zero_all(P& params) {
  for (auto* t : params.tensors()) t->zero();
}

template <ParameterSet P>
bool all_finite(const P& params) {
  for (const auto* t : params.tensors()) {
    for (double v : t->data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <ParameterSet P>
std::size_t count_trainable(const P& params) {
  std::size_t n = 0;
  for (const auto* t : params.tensors()) {
    if (t->trainable) n += t->size();
  }
  return n;
}

}  // namespace curio
