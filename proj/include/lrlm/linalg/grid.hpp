// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrlm/common/error.hpp"

namespace lrlm::linalg {

/// Cumulative count of tensor storage allocations made by Grid in this
/// process. Used to prove that analytical paths never touch tensor memory.
struct AllocationStats {
  std::uint64_t grids = 0;
  std::uint64_t bytes = 0;
};

AllocationStats allocation_stats();

namespace detail {
void note_allocation(std::size_t bytes);
}

/// Dense row-major 2-D array. The universal numeric carrier.
///
/// Sequences are stored token-major: a grid of L tokens with width n is
/// L x n, one token per row.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    track();
  }

  Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Grid: data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
                       "x" + std::to_string(cols_));
    }
    track();
  }

  Grid(const Grid& other) : rows_(other.rows_), cols_(other.cols_), data_(other.data_) { track(); }
  Grid(Grid&&) noexcept = default;

  Grid& operator=(const Grid& other) {
    if (this != &other) {
      rows_ = other.rows_;
      cols_ = other.cols_;
      data_ = other.data_;
      track();
    }
    return *this;
  }
  Grid& operator=(Grid&&) noexcept = default;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Grid& other) const noexcept { return rows_ == other.rows_ && cols_ == other.cols_; }

  template <typename U>
  Grid<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Grid<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void track() const {
    if (!data_.empty()) detail::note_allocation(data_.size() * sizeof(T));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using TensorGrid = Grid<float>;
using TensorGrid64 = Grid<double>;

}  // namespace lrlm::linalg
