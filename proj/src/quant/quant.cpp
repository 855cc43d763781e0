// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/quant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lrlm/kernels/kernels.hpp"

namespace lrlm::quant {
namespace {

void check_bits(int bits) {
  if (bits != 4 && bits != 8) throw ConfigError("quantize: bits must be 4 or 8, got " + std::to_string(bits));
}

float reconstruct(unsigned code, float scale, float offset) {
  return static_cast<float>(static_cast<double>(offset) + static_cast<double>(code) * static_cast<double>(scale));
}

// The float nearest to (hi - lo) / levels, nudged by a few ulps when needed
// so that the top code reconstructs `hi` exactly.
float pick_scale(float lo, float hi, unsigned levels) {
  const double exact = (static_cast<double>(hi) - static_cast<double>(lo)) / levels;
  const float nearest = static_cast<float>(exact);
  if (reconstruct(levels, nearest, lo) == hi) return nearest;
  float below = nearest;
  float above = nearest;
  for (int step = 0; step < 16; ++step) {
    below = std::nextafter(below, 0.0f);
    above = std::nextafter(above, std::numeric_limits<float>::infinity());
    if (reconstruct(levels, below, lo) == hi) return below;
    if (reconstruct(levels, above, lo) == hi) return above;
  }
  return nearest;
}

void quantize_row(std::span<const float> row, int bits, std::uint8_t* out, float& scale, float& offset) {
  const auto [lo_it, hi_it] = std::minmax_element(row.begin(), row.end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  const unsigned levels = (1u << bits) - 1u;
  offset = lo;
  scale = hi > lo ? pick_scale(lo, hi, levels) : 0.0f;
  for (std::size_t j = 0; j < row.size(); ++j) {
    unsigned code = 0;
    if (scale > 0.0f) {
      const double q = std::round((static_cast<double>(row[j]) - lo) / static_cast<double>(scale));
      code = static_cast<unsigned>(std::clamp(q, 0.0, static_cast<double>(levels)));
    }
    if (bits == 8) {
      out[j] = static_cast<std::uint8_t>(code);
    } else if (j % 2 == 0) {
      out[j / 2] = static_cast<std::uint8_t>(code);
    } else {
      out[j / 2] = static_cast<std::uint8_t>(out[j / 2] | (code << 4));
    }
  }
}

}  // namespace

QuantizedMatrix::QuantizedMatrix(std::size_t rows, std::size_t cols, int bits, std::vector<std::uint8_t> codes,
                                 std::vector<float> scale, std::vector<float> offset)
    : rows_(rows), cols_(cols), bits_(bits), codes_(std::move(codes)), scale_(std::move(scale)), offset_(std::move(offset)) {
  check_bits(bits_);
  if (codes_.size() != rows_ * row_stride() || scale_.size() != rows_ || offset_.size() != rows_) {
    throw ShapeError("QuantizedMatrix: inconsistent code/scale/offset lengths");
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (!(scale_[i] >= 0.0f) || !std::isfinite(scale_[i]) || !std::isfinite(offset_[i])) {
      throw NumericError("QuantizedMatrix", "row " + std::to_string(i) + " has invalid scale/offset");
    }
  }
}

unsigned QuantizedMatrix::code(std::size_t i, std::size_t j) const noexcept {
  const std::uint8_t* row = codes_.data() + i * row_stride();
  if (bits_ == 8) return row[j];
  const std::uint8_t byte = row[j / 2];
  return (j % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
}

float QuantizedMatrix::value(std::size_t i, std::size_t j) const noexcept {
  return reconstruct(code(i, j), scale_[i], offset_[i]);
}

template <typename T>
void QuantizedMatrix::dequantize_row(std::size_t i, std::span<T> out) const {
  for (std::size_t j = 0; j < cols_; ++j) out[j] = static_cast<T>(value(i, j));
}

template void QuantizedMatrix::dequantize_row(std::size_t, std::span<float>) const;
template void QuantizedMatrix::dequantize_row(std::size_t, std::span<double>) const;

QuantizedMatrix quantize_rows(const linalg::TensorGrid& w, int bits) {
  check_bits(bits);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w.data()[i])) throw NumericError("quantize_rows", "non-finite input at index " + std::to_string(i));
  }
  const std::size_t stride = bits == 8 ? w.cols() : (w.cols() + 1) / 2;
  std::vector<std::uint8_t> codes(w.rows() * stride, 0);
  std::vector<float> scale(w.rows()), offset(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    if (w.cols() == 0) continue;
    quantize_row(w.row(i), bits, codes.data() + i * stride, scale[i], offset[i]);
  }
  return QuantizedMatrix(w.rows(), w.cols(), bits, std::move(codes), std::move(scale), std::move(offset));
}

linalg::TensorGrid dequantize_rows(const QuantizedMatrix& q) {
  linalg::TensorGrid out(q.rows(), q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) q.dequantize_row(i, out.row(i));
  return out;
}

std::vector<float> qmatvec(const QuantizedMatrix& q, std::span<const float> x) {
  if (x.size() != q.cols()) {
    throw ShapeError("qmatvec: " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()) + " * vector(" +
                     std::to_string(x.size()) + ")");
  }
  const auto& k = kernels::active();
  const double sum_x = k.sum_f32(x.data(), x.size());
  std::vector<float> y(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::uint8_t* codes = q.row_codes(i).data();
    const double dot = q.bits() == 8 ? k.dot_u8_f32(codes, x.data(), x.size()) : k.dot_u4_f32(codes, x.data(), x.size());
    y[i] = static_cast<float>(static_cast<double>(q.scale()[i]) * dot + static_cast<double>(q.offset()[i]) * sum_x);
  }
  return y;
}

std::vector<double> qmatvec(const QuantizedMatrix& q, std::span<const double> x) {
  if (x.size() != q.cols()) throw ShapeError("qmatvec: shape mismatch");
  double sum_x = 0.0;
  for (double v : x) sum_x += v;
  std::vector<double> y(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < q.cols(); ++j) dot += static_cast<double>(q.code(i, j)) * x[j];
    y[i] = static_cast<double>(q.scale()[i]) * dot + static_cast<double>(q.offset()[i]) * sum_x;
  }
  return y;
}

QuantizedMatrix quantize_activations(std::span<const float> x, int bits) {
  linalg::TensorGrid row(1, x.size(), std::vector<float>(x.begin(), x.end()));
  return quantize_rows(row, bits);
}

double quantized_size_bytes(double param_count, int bits, std::size_t row_len) {
  if (param_count <= 0.0) return 0.0;
  const double code_bytes = std::ceil(param_count * bits / 8.0);
  if (bits >= 16 || row_len == 0) return code_bytes;
  const double rows = std::ceil(param_count / static_cast<double>(row_len));
  return code_bytes + 8.0 * rows;
}

}  // namespace lrlm::quant
