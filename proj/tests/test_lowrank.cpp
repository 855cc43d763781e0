// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>

#include "lrlm/common/error.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"
#include "lrlm/lowrank/decompose.hpp"
#include "lrlm/lowrank/lowrank.hpp"
#include "support/oracles.hpp"

namespace {

using lrlm::linalg::Grid;
using namespace lrlm::lowrank;

template <typename T>
Grid<T> rnd(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  return lrlm::linalg::seeded_random<T>(r, c, seed, lrlm::linalg::Gaussian{sd});
}

std::vector<double> eigen_spectrum(const Grid<double>& w) {
  Eigen::MatrixXd m(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) m(i, j) = w(i, j);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

TEST(Decompose, TruncationErrorIsEckartYoungTail) {
  auto w = rnd<double>(48, 30, 7);
  auto sv = eigen_spectrum(w);
  for (std::size_t r : {1u, 5u, 17u, 30u}) {
    auto f = decompose_linear(w, r);
    EXPECT_EQ(f.down.rows(), r);
    EXPECT_EQ(f.down.cols(), 30u);
    EXPECT_EQ(f.up.rows(), 48u);
    auto diff = f.product();
    lrlm::linalg::add_scaled(diff, w, -1.0);
    double tail = 0.0;
    for (std::size_t i = r; i < sv.size(); ++i) tail += sv[i] * sv[i];
    EXPECT_NEAR(lrlm::linalg::frobenius_norm(diff), std::sqrt(tail), 1e-9 * sv[0]) << r;
  }
}

TEST(Decompose, DownRowsOrthonormal) {
  auto f = decompose_linear(rnd<double>(20, 40, 3), 8);
  auto g = lrlm::linalg::matmul_nt(f.down, f.down);
  EXPECT_LE(lrlm::linalg::max_abs_diff(g, lrlm::linalg::identity<double>(8)), 1e-10);
}

TEST(Decompose, ExactLowRankInputRecovered) {
  auto a = rnd<double>(24, 3, 1);
  auto b = rnd<double>(3, 16, 2);
  auto w = lrlm::linalg::matmul(a, b);
  auto f = decompose_linear(w, 3);
  EXPECT_LE(lrlm::linalg::max_abs_diff(f.product(), w), 1e-10);
}

TEST(Decompose, FloatInput) {
  auto w = rnd<float>(16, 12, 4);
  auto f = decompose_linear(w, 12);
  EXPECT_LE(lrlm::linalg::max_abs_diff(f.product(), w), 1e-5);
}

TEST(Decompose, RejectsBadRank) {
  auto w = rnd<double>(6, 4, 1);
  EXPECT_THROW(decompose_linear(w, 0), lrlm::ConfigError);
  EXPECT_THROW(decompose_linear(w, 5), lrlm::ConfigError);
}

TEST(LowRank, ForwardMatchesProduct) {
  auto f = random_factors<double>(12, 9, 4, 11, 0.5);
  auto x = rnd<double>(1, 9, 12);
  auto got = lr_forward(f, std::span<const double>(x.row(0)));
  auto want = lrlm::testing::naive_matmul(lrlm::testing::to_mat(f.product()),
                                          lrlm::testing::naive_transpose(lrlm::testing::to_mat(x)));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(got[i], want[i][0], 1e-12);
  EXPECT_EQ(f.param_count(), 4u * (9 + 12));
}

TEST(LowRank, ValidateCatchesRankMismatch) {
  LowRankFactors<double> f{Grid<double>(3, 5), Grid<double>(4, 2)};
  EXPECT_THROW(f.validate(), lrlm::ShapeError);
}

TEST(Lora, FreshAdapterIsIdentityDelta) {
  auto w = rnd<float>(10, 8, 1);
  auto a = make_lora<float>(BaseWeight<float>(w), 4, 2);
  auto x = rnd<float>(1, 8, 3);
  auto y = lora_forward(a, std::span<const float>(x.row(0)));
  auto ref = lrlm::linalg::matvec(w, std::span<const float>(x.row(0)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y[i], ref[i]);
}

TEST(Lora, MergeEquivalence) {
  auto w = rnd<float>(32, 24, 1);
  auto a = make_lora<float>(BaseWeight<float>(w), 6, 2);
  a.delta.up = rnd<float>(32, 6, 5, 0.1);
  auto x = rnd<float>(4, 24, 9);
  std::vector<std::vector<float>> before;
  for (std::size_t t = 0; t < 4; ++t) before.push_back(lora_forward(a, std::span<const float>(x.row(t))));
  auto merged = lora_merge(a);
  EXPECT_TRUE(a.merged);
  for (std::size_t t = 0; t < 4; ++t) {
    auto after = lrlm::linalg::matvec(merged, std::span<const float>(x.row(t)));
    for (std::size_t i = 0; i < after.size(); ++i) {
      EXPECT_LE(std::abs(after[i] - before[t][i]), 1e-5 * std::max(1.0f, std::abs(before[t][i])));
    }
  }
  EXPECT_THROW(lora_merge(a), lrlm::ConfigError);
}

TEST(Lora, QuantizedBase) {
  auto w = rnd<float>(16, 12, 1);
  auto q = lrlm::quant::quantize_rows(w, 4);
  auto a = make_lora<float>(BaseWeight<float>(q), 2, 3);
  a.delta.up = rnd<float>(16, 2, 4, 0.1);
  EXPECT_TRUE(a.quantized_base());
  auto x = rnd<float>(1, 12, 5);
  auto y = lora_forward(a, std::span<const float>(x.row(0)));
  auto base = lrlm::quant::qmatvec(q, std::span<const float>(x.row(0)));
  auto delta = lr_forward(a.delta, std::span<const float>(x.row(0)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], base[i] + delta[i], 1e-5);
  EXPECT_THROW(lora_merge(a), lrlm::ConfigError);
  dequantize_base(a);
  EXPECT_FALSE(a.quantized_base());
  auto merged = lora_merge(a);
  auto z = lrlm::linalg::matvec(merged, std::span<const float>(x.row(0)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(z[i], y[i], 1e-5);
}

TEST(Blend, AlphaSchedule) {
  BlendLayer<double> b{rnd<double>(4, 3, 1), random_factors<double>(4, 3, 2, 2), 1.0, 10};
  EXPECT_EQ(b.alpha(0), 1.0);
  EXPECT_DOUBLE_EQ(b.alpha(5), 0.5);
  EXPECT_EQ(b.alpha(10), 0.0);
  EXPECT_EQ(b.alpha(50), 0.0);
  b.start_alpha = 0.8;
  EXPECT_DOUBLE_EQ(b.alpha(5), 0.4);
}

TEST(Blend, ForwardEndpointsAndMidpoint) {
  BlendLayer<double> b{rnd<double>(6, 5, 1), random_factors<double>(6, 5, 2, 2, 0.3), 1.0, 4};
  auto x = rnd<double>(1, 5, 3);
  std::span<const double> xs(x.row(0));
  auto dense = lrlm::linalg::matvec(b.base, xs);
  auto low = lr_forward(b.delta, xs);
  auto y0 = blend_forward(b, xs, 0);
  auto y2 = blend_forward(b, xs, 2);
  auto y4 = blend_forward(b, xs, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(y0[i], dense[i]);
    EXPECT_EQ(y4[i], low[i]);
    EXPECT_NEAR(y2[i], 0.5 * dense[i] + 0.5 * low[i], 1e-14);
  }
}

lrlm::transformer::ModelConfig small_cfg() {
  lrlm::transformer::ModelConfig c;
  c.name = "small";
  c.vocab = 40, c.dim = 24, c.heads = 2, c.layers = 3, c.ffn_dim = 40, c.max_seq = 16;
  return c;
}

TEST(DecomposeModel, BitIdenticalAcrossWorkerCounts) {
  lrlm::transformer::Model<float> m(small_cfg(), {}, 5);
  auto a = decompose_model(m, 6, 1);
  auto b = decompose_model(m, 6, 4);
  auto pa = a.parameters();
  auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(lrlm::linalg::max_abs_diff(*pa[i].value, *pb[i].value), 0.0) << pa[i].name;
  }
}

TEST(DecomposeModel, ReplacesTargetsAndShrinks) {
  using lrlm::transformer::MatrixId;
  lrlm::transformer::Model<float> m(small_cfg(), {}, 5);
  auto d = decompose_model(m, 4, 2);
  for (std::size_t l = 0; l < 3; ++l) {
    for (MatrixId id : lrlm::transformer::kBlockMatrices) {
      EXPECT_EQ(d.linear(l, id).kind(), lrlm::transformer::LinearKind::kLowRank);
    }
  }
  EXPECT_EQ(d.head().kind(), lrlm::transformer::LinearKind::kDense);
  // Each block: 4 square n x n, plus U, G (m x n) and D (n x m).
  const std::size_t dense_block = 4 * 24 * 24 + 3 * 24 * 40;
  const std::size_t lr_block = 4 * 4 * 48 + 3 * 4 * 64;
  EXPECT_EQ(m.param_count() - d.param_count(), 3 * (dense_block - lr_block));

  const MatrixId only[] = {MatrixId::kH};
  auto h = decompose_model(m, 4, 1, {only[0]});
  EXPECT_EQ(h.head().kind(), lrlm::transformer::LinearKind::kLowRank);
  EXPECT_EQ(h.linear(0, MatrixId::kQ).kind(), lrlm::transformer::LinearKind::kDense);
}

TEST(DecomposeModel, Errors) {
  using lrlm::transformer::MatrixId;
  lrlm::transformer::Model<float> m(small_cfg(), {}, 5);
  EXPECT_THROW(decompose_model(m, 4, 1, {}), lrlm::ConfigError);
  EXPECT_THROW(decompose_model(m, 4, 1, {MatrixId::kE}), lrlm::ConfigError);
  try {
    decompose_model(m, 30, 2);
    FAIL() << "rank above min dimension accepted";
  } catch (const lrlm::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.wq"), std::string::npos) << e.what();
  }
}

}  // namespace
