// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/linalg/random.hpp"

#include <cmath>

namespace lrlm::linalg {

std::uint64_t SplitMix64::below(std::uint64_t bound) {
  if (bound == 0) return 0;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
  }
}

double SplitMix64::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  SplitMix64 mix(seed ^ (tag * 0xD1B54A32D192ED03ULL));
  return mix.next();
}

template <typename T>
Grid<T> seeded_random(std::size_t rows, std::size_t cols, std::uint64_t seed, const Distribution& dist) {
  SplitMix64 rng(seed);
  std::vector<T> data(rows * cols);
  if (const auto* g = std::get_if<Gaussian>(&dist)) {
    for (auto& v : data) v = static_cast<T>(g->mean + g->stddev * rng.gaussian());
  } else {
    const auto& u = std::get<Uniform>(dist);
    for (auto& v : data) v = static_cast<T>(u.lo + (u.hi - u.lo) * rng.uniform());
  }
  return Grid<T>(rows, cols, std::move(data));
}

template Grid<float> seeded_random(std::size_t, std::size_t, std::uint64_t, const Distribution&);
template Grid<double> seeded_random(std::size_t, std::size_t, std::uint64_t, const Distribution&);

}  // namespace lrlm::linalg
