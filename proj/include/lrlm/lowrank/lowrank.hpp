// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank linear maps y = up * (down * x), LoRA adapters W + up * down, and
// the alpha-blended transition layer alpha * W x + (1 - alpha) * up * down * x.
//
// Orientation is always down-then-up: `down` is r x fan_in, `up` is
// fan_out x r.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "lrlm/linalg/grid.hpp"
#include "lrlm/quant/quant.hpp"

namespace lrlm::lowrank {

using linalg::Grid;

template <typename T>
struct LowRankFactors {
  Grid<T> down;  // r x fan_in
  Grid<T> up;    // fan_out x r

  std::size_t rank() const noexcept { return down.rows(); }
  std::size_t fan_in() const noexcept { return down.cols(); }
  std::size_t fan_out() const noexcept { return up.rows(); }
  std::size_t param_count() const noexcept { return rank() * (fan_in() + fan_out()); }

  /// Throws ShapeError when up and down disagree on the rank.
  void validate() const;

  /// up * down, fan_out x fan_in.
  Grid<T> product() const;

  template <typename U>
  LowRankFactors<U> cast() const {
    return {down.template cast<U>(), up.template cast<U>()};
  }
};

/// Factors for a fan_out x fan_in layer: down ~ N(0, stddev), up ~ N(0, stddev).
template <typename T>
LowRankFactors<T> random_factors(std::size_t fan_out, std::size_t fan_in, std::size_t rank, std::uint64_t seed,
                                 double stddev = 0.02);

/// up * (down * x). Costs r * (fan_in + fan_out) multiply-adds.
template <typename T>
std::vector<T> lr_forward(const LowRankFactors<T>& f, std::span<const T> x);

/// down = V_r^T, up = U_r Sigma_r from the truncated SVD of w.
template <typename T>
LowRankFactors<T> decompose_linear(const Grid<T>& w, std::size_t rank);

template <typename T>
using BaseWeight = std::variant<Grid<T>, quant::QuantizedMatrix>;

template <typename T>
struct LoraAdapter {
  BaseWeight<T> base;  // frozen
  LowRankFactors<T> delta;
  bool merged = false;

  bool quantized_base() const noexcept { return std::holds_alternative<quant::QuantizedMatrix>(base); }
  std::size_t fan_in() const;
  std::size_t fan_out() const;
};

/// Adapter with down ~ N(0, 0.02) and up = 0, so it starts as the base layer.
template <typename T>
LoraAdapter<T> make_lora(BaseWeight<T> base, std::size_t rank, std::uint64_t seed);

/// W x + up * (down * x). A quantized base goes through qmatvec.
template <typename T>
std::vector<T> lora_forward(const LoraAdapter<T>& a, std::span<const T> x);

/// Folds the delta into the base: base <- W + up * down, merged <- true.
/// Rejects a second merge and a quantized base (call dequantize_base first).
template <typename T>
Grid<T> lora_merge(LoraAdapter<T>& a);

/// Replaces a quantized base with its dequantized dense matrix.
template <typename T>
void dequantize_base(LoraAdapter<T>& a);

template <typename T>
struct BlendLayer {
  Grid<T> base;  // frozen
  LowRankFactors<T> delta;
  double start_alpha = 1.0;
  std::size_t end_step = 0;

  /// Linear decay from start_alpha at step 0 to 0 at end_step, clamped.
  double alpha(std::size_t step) const noexcept;
};

/// alpha(step) * W x + (1 - alpha(step)) * up * (down * x)
template <typename T>
std::vector<T> blend_forward(const BlendLayer<T>& b, std::span<const T> x, std::size_t step);

}  // namespace lrlm::lowrank
