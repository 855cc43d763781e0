// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "lrlm/linalg/grid.hpp"

namespace lrlm::linalg {

/// a (m x k) * b (k x n). Every output element is one 64-bit dot product.
template <typename T>
Grid<T> matmul(const Grid<T>& a, const Grid<T>& b);

/// a (m x k) * b^T where b is (n x k). The linear-layer product X W^T.
template <typename T>
Grid<T> matmul_nt(const Grid<T>& a, const Grid<T>& b);

/// a^T * b where a is (k x m) and b is (k x n). Weight-gradient shape dY^T X.
template <typename T>
Grid<T> matmul_tn(const Grid<T>& a, const Grid<T>& b);

/// y_i = sum_j a_ij x_j
template <typename T>
std::vector<T> matvec(const Grid<T>& a, std::span<const T> x);

template <typename T>
Grid<T> transpose(const Grid<T>& a);

/// a += alpha * b (same shape).
template <typename T>
void add_scaled(Grid<T>& a, const Grid<T>& b, T alpha = T{1});

template <typename T>
double frobenius_norm(const Grid<T>& a);

/// Largest |a_ij - b_ij|.
template <typename T>
double max_abs_diff(const Grid<T>& a, const Grid<T>& b);

/// Throws NumericError naming `what` when any entry is NaN or infinite.
template <typename T>
void require_finite(const Grid<T>& a, std::string_view what);

template <typename T>
Grid<T> identity(std::size_t n);

}  // namespace lrlm::linalg
