// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// NEON kernels for AArch64, where Advanced SIMD is part of the base ISA.

#include "lrlm/kernels/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

namespace lrlm::kernels {
namespace {

double dot_f32(const float* a, const float* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t va = vld1q_f32(a + i);
    const float32x4_t vb = vld1q_f32(b + i);
    acc0 = vfmaq_f64(acc0, vcvt_f64_f32(vget_low_f32(va)), vcvt_f64_f32(vget_low_f32(vb)));
    acc1 = vfmaq_f64(acc1, vcvt_high_f64_f32(va), vcvt_high_f64_f32(vb));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), alpha));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_n_f64(vld1q_f64(y + i), vld1q_f64(x + i), alpha));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

inline void accumulate_codes(uint32x4_t codes, const float* x, float64x2_t& acc0, float64x2_t& acc1) {
  const float32x4_t c = vcvtq_f32_u32(codes);
  const float32x4_t vx = vld1q_f32(x);
  acc0 = vfmaq_f64(acc0, vcvt_f64_f32(vget_low_f32(c)), vcvt_f64_f32(vget_low_f32(vx)));
  acc1 = vfmaq_f64(acc1, vcvt_high_f64_f32(c), vcvt_high_f64_f32(vx));
}

double dot_u8_f32(const std::uint8_t* codes, const float* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const uint16x8_t wide = vmovl_u8(vld1_u8(codes + i));
    accumulate_codes(vmovl_u16(vget_low_u16(wide)), x + i, acc0, acc1);
    accumulate_codes(vmovl_u16(vget_high_u16(wide)), x + i + 4, acc0, acc1);
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += static_cast<double>(codes[i]) * static_cast<double>(x[i]);
  return acc;
}

double dot_u4_f32(const std::uint8_t* packed, const float* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const uint8x8_t bytes = vld1_u8(packed + i / 2);
    const uint8x8x2_t split = vzip_u8(vand_u8(bytes, vdup_n_u8(0x0F)), vshr_n_u8(bytes, 4));
    const uint16x8_t lo = vmovl_u8(split.val[0]);
    const uint16x8_t hi = vmovl_u8(split.val[1]);
    accumulate_codes(vmovl_u16(vget_low_u16(lo)), x + i, acc0, acc1);
    accumulate_codes(vmovl_u16(vget_high_u16(lo)), x + i + 4, acc0, acc1);
    accumulate_codes(vmovl_u16(vget_low_u16(hi)), x + i + 8, acc0, acc1);
    accumulate_codes(vmovl_u16(vget_high_u16(hi)), x + i + 12, acc0, acc1);
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) {
    const std::uint8_t byte = packed[i / 2];
    const unsigned code = (i % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
    acc += static_cast<double>(code) * static_cast<double>(x[i]);
  }
  return acc;
}

double sum_f32(const float* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(x + i);
    acc0 = vaddq_f64(acc0, vcvt_f64_f32(vget_low_f32(v)));
    acc1 = vaddq_f64(acc1, vcvt_high_f64_f32(v));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

constexpr KernelTable kNeon{
    "neon", dot_f32, dot_f64, axpy_f32, axpy_f64, dot_u8_f32, dot_u4_f32, sum_f32,
};

}  // namespace

const KernelTable* detail::neon_table() { return &kNeon; }

}  // namespace lrlm::kernels

#else

namespace lrlm::kernels {
const KernelTable* detail::neon_table() { return nullptr; }
}  // namespace lrlm::kernels

#endif
