// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/lowrank/lowrank.hpp"

#include <algorithm>
#include <string>

#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"
#include "lrlm/linalg/svd.hpp"

namespace lrlm::lowrank {

template <typename T>
void LowRankFactors<T>::validate() const {
  if (up.cols() != down.rows()) {
    throw ShapeError("LowRankFactors: up has " + std::to_string(up.cols()) + " columns but down has " +
                     std::to_string(down.rows()) + " rows");
  }
}

template <typename T>
Grid<T> LowRankFactors<T>::product() const {
  validate();
  return linalg::matmul(up, down);
}

template <typename T>
LowRankFactors<T> random_factors(std::size_t fan_out, std::size_t fan_in, std::size_t rank, std::uint64_t seed,
                                 double stddev) {
  return {linalg::seeded_random<T>(rank, fan_in, linalg::derive_seed(seed, 1), linalg::Gaussian{stddev}),
          linalg::seeded_random<T>(fan_out, rank, linalg::derive_seed(seed, 2), linalg::Gaussian{stddev})};
}

template <typename T>
std::vector<T> lr_forward(const LowRankFactors<T>& f, std::span<const T> x) {
  f.validate();
  const std::vector<T> z = linalg::matvec(f.down, x);
  return linalg::matvec(f.up, std::span<const T>(z));
}

template <typename T>
LowRankFactors<T> decompose_linear(const Grid<T>& w, std::size_t rank) {
  auto svd = linalg::truncated_svd(w, rank);
  return {std::move(svd.v_t), std::move(svd.u_sigma)};
}

template <typename T>
std::size_t LoraAdapter<T>::fan_in() const {
  return std::visit([](const auto& w) { return w.cols(); }, base);
}

template <typename T>
std::size_t LoraAdapter<T>::fan_out() const {
  return std::visit([](const auto& w) { return w.rows(); }, base);
}

template <typename T>
LoraAdapter<T> make_lora(BaseWeight<T> base, std::size_t rank, std::uint64_t seed) {
  LoraAdapter<T> a{std::move(base), {}, false};
  a.delta.down = linalg::seeded_random<T>(rank, a.fan_in(), seed, linalg::Gaussian{0.02});
  a.delta.up = Grid<T>(a.fan_out(), rank);
  return a;
}

template <typename T>
std::vector<T> lora_forward(const LoraAdapter<T>& a, std::span<const T> x) {
  if (x.size() != a.fan_in()) throw ShapeError("lora_forward: input length mismatch");
  std::vector<T> y;
  if (const auto* q = std::get_if<quant::QuantizedMatrix>(&a.base)) {
    y = quant::qmatvec(*q, x);
  } else {
    y = linalg::matvec(std::get<Grid<T>>(a.base), x);
  }
  if (!a.merged) {
    const std::vector<T> d = lr_forward(a.delta, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += d[i];
  }
  return y;
}

template <typename T>
Grid<T> lora_merge(LoraAdapter<T>& a) {
  if (a.merged) throw ConfigError("lora_merge: adapter already merged");
  if (a.quantized_base()) throw ConfigError("lora_merge: base is quantized; dequantize it before merging");
  auto& w = std::get<Grid<T>>(a.base);
  const Grid<T> delta = a.delta.product();
  if (!delta.same_shape(w)) throw ShapeError("lora_merge: delta shape differs from base");
  linalg::add_scaled(w, delta);
  a.merged = true;
  return w;
}

template <typename T>
void dequantize_base(LoraAdapter<T>& a) {
  if (const auto* q = std::get_if<quant::QuantizedMatrix>(&a.base)) {
    Grid<T> dense(q->rows(), q->cols());
    for (std::size_t i = 0; i < q->rows(); ++i) q->dequantize_row(i, dense.row(i));
    a.base = std::move(dense);
  }
}

template <typename T>
double BlendLayer<T>::alpha(std::size_t step) const noexcept {
  if (end_step == 0 || step >= end_step) return 0.0;
  const double a = start_alpha * (1.0 - static_cast<double>(step) / static_cast<double>(end_step));
  return std::clamp(a, 0.0, 1.0);
}

template <typename T>
std::vector<T> blend_forward(const BlendLayer<T>& b, std::span<const T> x, std::size_t step) {
  const double alpha = b.alpha(step);
  const std::vector<T> dense = linalg::matvec(b.base, x);
  if (alpha == 1.0) return dense;
  const std::vector<T> low = lr_forward(b.delta, x);
  if (alpha == 0.0) return low;
  std::vector<T> y(dense.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<T>(alpha * static_cast<double>(dense[i]) + (1.0 - alpha) * static_cast<double>(low[i]));
  }
  return y;
}

#define LRLM_INSTANTIATE(T)                                                                               \
  template struct LowRankFactors<T>;                                                                      \
  template struct LoraAdapter<T>;                                                                         \
  template struct BlendLayer<T>;                                                                          \
  template LowRankFactors<T> random_factors(std::size_t, std::size_t, std::size_t, std::uint64_t, double); \
  template std::vector<T> lr_forward(const LowRankFactors<T>&, std::span<const T>);                       \
  template LowRankFactors<T> decompose_linear(const Grid<T>&, std::size_t);                               \
  template LoraAdapter<T> make_lora(BaseWeight<T>, std::size_t, std::uint64_t);                           \
  template std::vector<T> lora_forward(const LoraAdapter<T>&, std::span<const T>);                        \
  template Grid<T> lora_merge(LoraAdapter<T>&);                                                           \
  template void dequantize_base(LoraAdapter<T>&);                                                         \
  template std::vector<T> blend_forward(const BlendLayer<T>&, std::span<const T>, std::size_t);

LRLM_INSTANTIATE(float)
LRLM_INSTANTIATE(double)
#undef LRLM_INSTANTIATE

}  // namespace lrlm::lowrank
