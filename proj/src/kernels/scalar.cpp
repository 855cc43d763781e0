// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "lrlm/kernels/kernels.hpp"

namespace lrlm::kernels {
namespace {

double dot_f32(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot_u8_f32(const std::uint8_t* codes, const float* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(codes[i]) * static_cast<double>(x[i]);
  return acc;
}

double dot_u4_f32(const std::uint8_t* packed, const float* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t byte = packed[i / 2];
    const unsigned code = (i % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
    acc += static_cast<double>(code) * static_cast<double>(x[i]);
  }
  return acc;
}

double sum_f32(const float* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

constexpr KernelTable kScalar{
    "scalar", dot_f32, dot_f64, axpy_f32, axpy_f64, dot_u8_f32, dot_u4_f32, sum_f32,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace lrlm::kernels
