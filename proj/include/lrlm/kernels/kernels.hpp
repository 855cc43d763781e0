// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inner-loop arithmetic kernels. Every kernel has a scalar reference
// implementation; SIMD variants (AVX2+FMA on x86-64, NEON on AArch64) are
// selected once at runtime. All dot products accumulate in 64-bit.
//
// Override the selection with LRLM_SIMD=scalar|avx2|neon.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace lrlm::kernels {

struct KernelTable {
  const char* name;

  // sum_i a[i] * b[i], products and accumulation in double.
  double (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);

  // y[i] = fma(alpha, x[i], y[i]). Elementwise, so every variant is bit-exact.
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);

  // sum_i code[i] * x[i] for unsigned 8-bit codes.
  double (*dot_u8_f32)(const std::uint8_t* codes, const float* x, std::size_t n);
  // Same for 4-bit codes packed two per byte, low nibble = even index.
  double (*dot_u4_f32)(const std::uint8_t* packed, const float* x, std::size_t n);

  double (*sum_f32)(const float* x, std::size_t n);
};

/// Scalar reference kernels. Always available; summation strictly left to right.
const KernelTable& scalar_table();

/// Every table usable on this CPU, scalar first.
std::vector<const KernelTable*> available_tables();

/// Looks a table up by name among the available ones; nullptr if absent.
const KernelTable* find_table(std::string_view name);

/// The table used by the library. Chosen on first use.
const KernelTable& active();

/// Replaces the active table (tests and benchmarks). Not thread-safe with
/// concurrent kernel calls.
void set_active(const KernelTable& table);

// Entry points used by the rest of the library.
inline double dot(const float* a, const float* b, std::size_t n) { return active().dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot_f64(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy_f32(alpha, x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy_f64(alpha, x, y, n); }

namespace detail {
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
}  // namespace detail

}  // namespace lrlm::kernels
