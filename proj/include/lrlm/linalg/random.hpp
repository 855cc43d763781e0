// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <variant>

#include "lrlm/linalg/grid.hpp"

namespace lrlm::linalg {

/// SplitMix64 (Steele, Lea & Flood). State advances by the golden-ratio
/// increment 0x9E3779B97F4A7C15; output mix uses the multipliers
/// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB with shifts 30, 27, 31.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via the Marsaglia polar method.
  double gaussian();

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct Gaussian {
  double stddev = 1.0;
  double mean = 0.0;
};

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

using Distribution = std::variant<Gaussian, Uniform>;

/// Identical bytes for identical (rows, cols, seed, dist).
template <typename T>
Grid<T> seeded_random(std::size_t rows, std::size_t cols, std::uint64_t seed, const Distribution& dist);

/// Derives an independent stream seed from a parent seed and a tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace lrlm::linalg
