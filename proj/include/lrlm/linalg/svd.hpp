// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "lrlm/linalg/grid.hpp"

namespace lrlm::linalg {

/// Singular values, non-increasing, all >= 0.
struct SingularSpectrum {
  std::vector<double> values;

  /// sqrt of the sum of squares of values[r:], the Eckart-Young error of a
  /// rank-r truncation.
  double tail_norm(std::size_t r) const;
};

template <typename T>
struct TruncatedSvd {
  Grid<T> u_sigma;  // rows x r, columns are u_i * sigma_i
  Grid<T> v_t;      // r x cols, orthonormal rows
  SingularSpectrum spectrum;  // full spectrum, min(rows, cols) values
};

struct SvdOptions {
  double tolerance = 1e-10;       // relative off-diagonal threshold
  std::size_t max_sweeps = 100;
};

/// One-sided (Hestenes) Jacobi on the smaller dimension, in 64-bit.
///
/// Converges when the off-diagonal Frobenius mass of the Gram matrix falls
/// below tolerance * ||w||_F^2. Throws ConfigError for r outside
/// [1, min(rows, cols)] and NumericError (carrying the residual) when the
/// sweep cap is reached first.
template <typename T>
TruncatedSvd<T> truncated_svd(const Grid<T>& w, std::size_t r, const SvdOptions& options = {});

}  // namespace lrlm::linalg
