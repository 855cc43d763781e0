// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lrlm/linalg/grid.hpp"

namespace lrlm::transformer {

using linalg::Grid;

inline constexpr double kRmsNormEps = 1e-5;

/// x_i / sqrt(mean(x^2) + eps) * gain_i
template <typename T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, double eps = kRmsNormEps);

/// Rotates pairs (v[2i], v[2i+1]) by position * base^(-2i/d). d must be even.
template <typename T>
std::vector<T> rope_apply(std::span<const T> v, std::size_t position, double base);

/// Single-head causal attention on token-major grids (l x d each):
/// softmax(q k^T / sqrt(d) + mask) v.
template <typename T>
Grid<T> attention(const Grid<T>& q, const Grid<T>& k, const Grid<T>& v, bool causal = true);

/// W^D (W^U x ⊙ SiLU(W^G x)); W^U, W^G are m x n and W^D is n x m.
template <typename T>
std::vector<T> ffn_forward(std::span<const T> x, const Grid<T>& w_up, const Grid<T>& w_gate, const Grid<T>& w_down);

/// Mean over positions of -log softmax(logits_row)[target]; logits is l x t.
template <typename T>
double cross_entropy_loss(const Grid<T>& logits, std::span<const int> targets);

/// Loss and d(loss)/d(logits).
template <typename T>
double cross_entropy_with_grad(const Grid<T>& logits, std::span<const int> targets, Grid<T>& dlogits);

/// In-place stable softmax over `row`.
template <typename T>
void softmax_inplace(std::span<T> row);

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

namespace detail {

// Row-wise helpers over token-major grids.
template <typename T>
Grid<T> rmsnorm_rows(const Grid<T>& x, std::span<const T> gain);

// Returns dx; accumulates d(gain) into dgain when non-null.
template <typename T>
Grid<T> rmsnorm_rows_backward(const Grid<T>& x, std::span<const T> gain, const Grid<T>& dy, T* dgain);

// Rotates every head slice of every row; row i has position first_position + i.
// inverse applies the transpose rotation (used by backward).
template <typename T>
void rope_rows(Grid<T>& x, std::size_t heads, std::size_t first_position, double base, bool inverse = false);

// One head of causal attention over strided token-major storage. Writes the
// causal probabilities into probs (l x l, row-major, masked entries zero) and,
// when scores is non-null, the scaled pre-softmax scores.
template <typename T>
void head_probs(const T* q, const T* k, std::size_t stride, std::size_t l, std::size_t d, T* scores, T* probs);

// out_i = sum_{j<=i} probs_ij v_j for one head.
template <typename T>
void head_mix(const T* probs, const T* v, std::size_t stride, std::size_t l, std::size_t d, T* out);

// Row i of head_probs / head_mix, for query row qi (used by cached decoding).
template <typename T>
void head_probs_row(const T* qi, const T* k, std::size_t stride, std::size_t i, std::size_t d, T* scores, T* probs);
template <typename T>
void head_mix_row(const T* probs, const T* v, std::size_t stride, std::size_t i, std::size_t d, T* out);

}  // namespace detail

}  // namespace lrlm::transformer
