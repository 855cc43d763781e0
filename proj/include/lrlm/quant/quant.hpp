// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-row asymmetric min-max quantization to 8 or 4 bits.
//
// Each row i stores offset_i = min(row) and scale_i = (max - min) / (2^b - 1);
// element j is coded as round((w_ij - offset_i) / scale_i), rounding half away
// from zero, and reconstructed as offset_i + code * scale_i.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lrlm/linalg/grid.hpp"

namespace lrlm::quant {

class QuantizedMatrix {
 public:
  QuantizedMatrix() = default;
  QuantizedMatrix(std::size_t rows, std::size_t cols, int bits, std::vector<std::uint8_t> codes,
                  std::vector<float> scale, std::vector<float> offset);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bits() const noexcept { return bits_; }
  unsigned levels() const noexcept { return (1u << bits_) - 1u; }

  /// Bytes per packed row: cols for 8-bit, ceil(cols / 2) for 4-bit.
  std::size_t row_stride() const noexcept { return bits_ == 8 ? cols_ : (cols_ + 1) / 2; }

  std::span<const std::uint8_t> codes() const noexcept { return codes_; }
  std::span<const std::uint8_t> row_codes(std::size_t i) const noexcept {
    return {codes_.data() + i * row_stride(), row_stride()};
  }
  std::span<const float> scale() const noexcept { return scale_; }
  std::span<const float> offset() const noexcept { return offset_; }

  /// Unpacked code of element (i, j).
  unsigned code(std::size_t i, std::size_t j) const noexcept;

  /// Reconstructed value of element (i, j).
  float value(std::size_t i, std::size_t j) const noexcept;

  /// Dequantizes row i into `out` (length cols).
  template <typename T>
  void dequantize_row(std::size_t i, std::span<T> out) const;

  std::size_t storage_bytes() const noexcept { return codes_.size() + 8 * rows_; }

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bits_ = 8;
  std::vector<std::uint8_t> codes_;
  std::vector<float> scale_;
  std::vector<float> offset_;
};

/// Quantizes every row of w. bits must be 4 or 8; w must be finite.
QuantizedMatrix quantize_rows(const linalg::TensorGrid& w, int bits);

linalg::TensorGrid dequantize_rows(const QuantizedMatrix& q);

/// scale_i * (codes_i . x) + offset_i * sum(x), without materializing the
/// dequantized matrix.
std::vector<float> qmatvec(const QuantizedMatrix& q, std::span<const float> x);
std::vector<double> qmatvec(const QuantizedMatrix& q, std::span<const double> x);

/// Single-vector quantization with the row rule (a 1 x n matrix).
QuantizedMatrix quantize_activations(std::span<const float> x, int bits);

/// Storage for param_count weights at `bits` per weight. Below 16 bits this
/// adds 8 bytes of scale/offset per row of `row_len` elements.
double quantized_size_bytes(double param_count, int bits, std::size_t row_len);

}  // namespace lrlm::quant
