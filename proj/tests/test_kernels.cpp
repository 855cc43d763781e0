// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lrlm/kernels/kernels.hpp"
#include "lrlm/linalg/random.hpp"

namespace {

using lrlm::kernels::KernelTable;

std::vector<float> rand_f32(std::size_t n, std::uint64_t seed) {
  lrlm::linalg::SplitMix64 g(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(g.uniform() * 2.0 - 1.0);
  return v;
}

// Oracle: the definition, summed in long double.
long double dot_oracle(const float* a, const float* b, std::size_t n) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

const std::size_t kLengths[] = {0, 1, 3, 7, 8, 15, 16, 17, 31, 64, 100, 1023};

class KernelEquivalence : public ::testing::TestWithParam<const KernelTable*> {};

TEST_P(KernelEquivalence, DotMatchesOracle) {
  const KernelTable& t = *GetParam();
  for (std::size_t n : kLengths) {
    auto a = rand_f32(n, 1 + n), b = rand_f32(n, 1000 + n);
    long double abs_sum = 0.0L;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(static_cast<long double>(a[i]) * b[i]);
    const double got = t.dot_f32(a.data(), b.data(), n);
    // Recursive double summation: |error| <= n u sum|a_i b_i|.
    const double tol = static_cast<double>(n + 1) * 0x1.0p-52 * static_cast<double>(abs_sum) + 1e-300;
    EXPECT_NEAR(got, static_cast<double>(dot_oracle(a.data(), b.data(), n)), tol) << t.name << " n=" << n;
    std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
    EXPECT_NEAR(t.dot_f64(ad.data(), bd.data(), n), got, 2.0 * tol);
  }
}

TEST_P(KernelEquivalence, AxpyBitExactAgainstScalar) {
  const KernelTable& t = *GetParam();
  const KernelTable& s = lrlm::kernels::scalar_table();
  for (std::size_t n : kLengths) {
    auto x = rand_f32(n, 7 + n), y1 = rand_f32(n, 9 + n);
    auto y2 = y1;
    t.axpy_f32(0.37f, x.data(), y1.data(), n);
    s.axpy_f32(0.37f, x.data(), y2.data(), n);
    EXPECT_EQ(y1, y2) << t.name << " n=" << n;
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(y2[i], std::fma(0.37f, x[i], rand_f32(n, 9 + n)[i]));
  }
}

TEST_P(KernelEquivalence, QuantizedDotsMatchScalar) {
  const KernelTable& t = *GetParam();
  for (std::size_t n : kLengths) {
    lrlm::linalg::SplitMix64 g(55 + n);
    std::vector<std::uint8_t> codes(n), packed((n + 1) / 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
      codes[i] = static_cast<std::uint8_t>(g.below(256));
      const std::uint8_t nib = codes[i] & 0xf;
      packed[i / 2] |= static_cast<std::uint8_t>(i % 2 == 0 ? nib : nib << 4);
    }
    auto x = rand_f32(n, 77 + n);
    long double o8 = 0.0L, o4 = 0.0L, os = 0.0L, abs8 = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      o8 += static_cast<long double>(codes[i]) * x[i];
      o4 += static_cast<long double>(codes[i] & 0xf) * x[i];
      os += x[i];
      abs8 += 255.0L * std::abs(x[i]);
    }
    const double tol = static_cast<double>(n + 1) * 0x1.0p-52 * static_cast<double>(abs8) + 1e-300;
    EXPECT_NEAR(t.dot_u8_f32(codes.data(), x.data(), n), static_cast<double>(o8), tol) << t.name;
    EXPECT_NEAR(t.dot_u4_f32(packed.data(), x.data(), n), static_cast<double>(o4), tol) << t.name;
    EXPECT_NEAR(t.sum_f32(x.data(), n), static_cast<double>(os), tol) << t.name;
  }
}

TEST_P(KernelEquivalence, DeterministicAcrossCalls) {
  const KernelTable& t = *GetParam();
  auto a = rand_f32(1000, 3), b = rand_f32(1000, 4);
  const double first = t.dot_f32(a.data(), b.data(), a.size());
  for (int i = 0; i < 5; ++i) EXPECT_EQ(t.dot_f32(a.data(), b.data(), a.size()), first);
}

INSTANTIATE_TEST_SUITE_P(AllTables, KernelEquivalence, ::testing::ValuesIn(lrlm::kernels::available_tables()),
                         [](const auto& info) { return std::string(info.param->name); });

TEST(KernelSelection, ScalarAlwaysAvailableAndSelectable) {
  auto tables = lrlm::kernels::available_tables();
  ASSERT_FALSE(tables.empty());
  EXPECT_STREQ(tables.front()->name, "scalar");
  ASSERT_NE(lrlm::kernels::find_table("scalar"), nullptr);
  EXPECT_EQ(lrlm::kernels::find_table("no-such-kernel"), nullptr);
  const KernelTable& before = lrlm::kernels::active();
  lrlm::kernels::set_active(lrlm::kernels::scalar_table());
  EXPECT_STREQ(lrlm::kernels::active().name, "scalar");
  lrlm::kernels::set_active(before);
}

}  // namespace
