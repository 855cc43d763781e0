// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/linalg/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "lrlm/kernels/kernels.hpp"

namespace lrlm::linalg {
namespace {

// Column-major working copy: `cols` columns of length `len`.
struct Columns {
  std::size_t len = 0;
  std::size_t count = 0;
  std::vector<double> data;

  double* col(std::size_t j) { return data.data() + j * len; }
  const double* col(std::size_t j) const { return data.data() + j * len; }
};

// Orthogonalizes the columns of `a` in place, accumulating the rotations into
// `v` (count x count, column-major). Returns the final off-diagonal mass.
double hestenes_jacobi(Columns& a, Columns& v, double threshold, std::size_t max_sweeps, bool& converged) {
  const std::size_t k = a.count;
  double off = 0.0;
  converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    off = 0.0;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double* ap = a.col(p);
        double* aq = a.col(q);
        const double alpha = kernels::dot(ap, ap, a.len);
        const double beta = kernels::dot(aq, aq, a.len);
        const double gamma = kernels::dot(ap, aq, a.len);
        off += gamma * gamma;
        if (gamma == 0.0 || std::abs(gamma) <= 1e-300) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < a.len; ++i) {
          const double x = ap[i];
          const double y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < v.len; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (std::sqrt(off) < threshold) {
      converged = true;
      return std::sqrt(off);
    }
  }
  return std::sqrt(off);
}

// Completes `basis` (rows of length n, some possibly zero) to orthonormal rows
// by Gram-Schmidt against the standard basis.
void complete_orthonormal(std::vector<std::vector<double>>& rows, const std::vector<bool>& valid, std::size_t n) {
  std::size_t probe = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (valid[i]) continue;
    while (probe < n) {
      std::vector<double> cand(n, 0.0);
      cand[probe++] = 1.0;
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (j == i || (!valid[j] && j > i)) continue;
        const double proj = std::inner_product(cand.begin(), cand.end(), rows[j].begin(), 0.0);
        for (std::size_t t = 0; t < n; ++t) cand[t] -= proj * rows[j][t];
      }
      const double norm = std::sqrt(std::inner_product(cand.begin(), cand.end(), cand.begin(), 0.0));
      if (norm > 1e-8) {
        for (auto& x : cand) x /= norm;
        rows[i] = std::move(cand);
        break;
      }
    }
  }
}

}  // namespace

double SingularSpectrum::tail_norm(std::size_t r) const {
  double acc = 0.0;
  for (std::size_t i = r; i < values.size(); ++i) acc += values[i] * values[i];
  return std::sqrt(acc);
}

template <typename T>
TruncatedSvd<T> truncated_svd(const Grid<T>& w, std::size_t r, const SvdOptions& options) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  const std::size_t k = std::min(rows, cols);
  if (r < 1 || r > k) {
    throw ConfigError("truncated_svd: rank " + std::to_string(r) + " outside [1, " + std::to_string(k) + "]");
  }
  // Work on the smaller dimension: columns of W when cols <= rows, else
  // columns of W^T (i.e. rows of W).
  const bool transposed = cols > rows;
  const std::size_t len = transposed ? cols : rows;

  Columns a{len, k, std::vector<double>(len * k)};
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = static_cast<double>(w(i, j));
      if (transposed) {
        a.col(i)[j] = x;
      } else {
        a.col(j)[i] = x;
      }
    }
  }
  Columns v{k, k, std::vector<double>(k * k, 0.0)};
  for (std::size_t i = 0; i < k; ++i) v.col(i)[i] = 1.0;

  const double norm_sq = std::inner_product(a.data.begin(), a.data.end(), a.data.begin(), 0.0);
  TruncatedSvd<T> out;
  if (norm_sq == 0.0) {
    out.spectrum.values.assign(k, 0.0);
  } else {
    bool converged = false;
    const double residual = hestenes_jacobi(a, v, options.tolerance * norm_sq, options.max_sweeps, converged);
    if (!converged) {
      std::ostringstream msg;
      msg << "no convergence after " << options.max_sweeps << " sweeps; off-diagonal residual " << residual;
      throw NumericError("truncated_svd", msg.str());
    }
  }

  std::vector<double> sigma(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) sigma[j] = std::sqrt(kernels::dot(a.col(j), a.col(j), len));
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });
  out.spectrum.values.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.spectrum.values[i] = sigma[order[i]];

  // a_j = W v_j = u_j sigma_j (or the same for W^T). Collect the r leading
  // pairs: `scaled` holds u_j sigma_j along the worked dimension, `unit`
  // holds the orthonormal partner v_j.
  std::vector<std::vector<double>> scaled(r), unit(r);
  std::vector<bool> unit_valid(r, true);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t j = order[i];
    scaled[i].assign(a.col(j), a.col(j) + len);
    unit[i].assign(v.col(j), v.col(j) + k);
  }

  if (!transposed) {
    // W = (U Sigma) V^T : u_sigma = a columns, v_t rows = v columns.
    out.u_sigma = Grid<T>(rows, r);
    out.v_t = Grid<T>(r, cols);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t t = 0; t < rows; ++t) out.u_sigma(t, i) = static_cast<T>(scaled[i][t]);
      for (std::size_t t = 0; t < cols; ++t) out.v_t(i, t) = static_cast<T>(unit[i][t]);
    }
  } else {
    // W^T = U' Sigma V'^T, so W = V' Sigma U'^T: u_sigma = v'_j sigma_j and
    // v_t rows = a_j / sigma_j (completed when sigma_j == 0).
    std::vector<std::vector<double>> right(r);
    for (std::size_t i = 0; i < r; ++i) {
      const double s = out.spectrum.values[i];
      right[i] = scaled[i];
      if (s > 1e-300 && s > 1e-13 * std::sqrt(norm_sq)) {
        for (auto& x : right[i]) x /= s;
      } else {
        std::fill(right[i].begin(), right[i].end(), 0.0);
        unit_valid[i] = false;
      }
    }
    complete_orthonormal(right, unit_valid, cols);
    out.u_sigma = Grid<T>(rows, r);
    out.v_t = Grid<T>(r, cols);
    for (std::size_t i = 0; i < r; ++i) {
      const double s = out.spectrum.values[i];
      for (std::size_t t = 0; t < rows; ++t) out.u_sigma(t, i) = static_cast<T>(unit[i][t] * s);
      for (std::size_t t = 0; t < cols; ++t) out.v_t(i, t) = static_cast<T>(right[i][t]);
    }
  }
  return out;
}

template TruncatedSvd<float> truncated_svd(const Grid<float>&, std::size_t, const SvdOptions&);
template TruncatedSvd<double> truncated_svd(const Grid<double>&, std::size_t, const SvdOptions&);

}  // namespace lrlm::linalg
