// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/linalg/ops.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "lrlm/kernels/kernels.hpp"

namespace lrlm::linalg {

namespace {
std::atomic<std::uint64_t> g_grids{0};
std::atomic<std::uint64_t> g_bytes{0};

std::string dims(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }
}  // namespace

AllocationStats allocation_stats() { return {g_grids.load(), g_bytes.load()}; }

void detail::note_allocation(std::size_t bytes) {
  g_grids.fetch_add(1, std::memory_order_relaxed);
  g_bytes.fetch_add(bytes, std::memory_order_relaxed);
}

template <typename T>
Grid<T> matmul_nt(const Grid<T>& a, const Grid<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + dims(a.rows(), a.cols()) + " * (" + dims(b.rows(), b.cols()) + ")^T");
  }
  Grid<T> c(a.rows(), b.rows());
  const std::size_t k = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ai = a.data() + i * k;
    T* ci = c.data() + i * b.rows();
    for (std::size_t j = 0; j < b.rows(); ++j) ci[j] = static_cast<T>(kernels::dot(ai, b.data() + j * k, k));
  }
  return c;
}

template <typename T>
Grid<T> matmul(const Grid<T>& a, const Grid<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.rows(), a.cols()) + " * " + dims(b.rows(), b.cols()));
  }
  return matmul_nt(a, transpose(b));
}

template <typename T>
Grid<T> matmul_tn(const Grid<T>& a, const Grid<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: (" + dims(a.rows(), a.cols()) + ")^T * " + dims(b.rows(), b.cols()));
  }
  return matmul_nt(transpose(a), transpose(b));
}

template <typename T>
std::vector<T> matvec(const Grid<T>& a, std::span<const T> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: " + dims(a.rows(), a.cols()) + " * vector(" + std::to_string(x.size()) + ")");
  }
  std::vector<T> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = static_cast<T>(kernels::dot(a.data() + i * a.cols(), x.data(), x.size()));
  return y;
}

template <typename T>
Grid<T> transpose(const Grid<T>& a) {
  Grid<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

template <typename T>
void add_scaled(Grid<T>& a, const Grid<T>& b, T alpha) {
  if (!a.same_shape(b)) throw ShapeError("add_scaled: " + dims(a.rows(), a.cols()) + " vs " + dims(b.rows(), b.cols()));
  kernels::axpy(alpha, b.data(), a.data(), a.size());
}

template <typename T>
double frobenius_norm(const Grid<T>& a) {
  return std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
}

template <typename T>
double max_abs_diff(const Grid<T>& a, const Grid<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + dims(a.rows(), a.cols()) + " vs " + dims(b.rows(), b.cols()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return worst;
}

template <typename T>
void require_finite(const Grid<T>& a, std::string_view what) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a.data()[i])) {
      throw NumericError(std::string(what), "non-finite value at index " + std::to_string(i));
    }
  }
}

template <typename T>
Grid<T> identity(std::size_t n) {
  Grid<T> g(n, n);
  for (std::size_t i = 0; i < n; ++i) g(i, i) = T{1};
  return g;
}

#define LRLM_INSTANTIATE(T)                                                  \
  template Grid<T> matmul(const Grid<T>&, const Grid<T>&);                   \
  template Grid<T> matmul_nt(const Grid<T>&, const Grid<T>&);                \
  template Grid<T> matmul_tn(const Grid<T>&, const Grid<T>&);                \
  template std::vector<T> matvec(const Grid<T>&, std::span<const T>);        \
  template Grid<T> transpose(const Grid<T>&);                                \
  template void add_scaled(Grid<T>&, const Grid<T>&, T);                     \
  template double frobenius_norm(const Grid<T>&);                            \
  template double max_abs_diff(const Grid<T>&, const Grid<T>&);              \
  template void require_finite(const Grid<T>&, std::string_view);           \
  template Grid<T> identity(std::size_t);

LRLM_INSTANTIATE(float)
LRLM_INSTANTIATE(double)
#undef LRLM_INSTANTIATE

}  // namespace lrlm::linalg
