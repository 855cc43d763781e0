// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "lrlm/common/error.hpp"
#include "lrlm/costmodel/costmodel.hpp"
#include "lrlm/linalg/grid.hpp"
#include "lrlm/transformer/model.hpp"

namespace {

using namespace lrlm::costmodel;
using lrlm::transformer::LayerSpecMap;
using lrlm::transformer::LinearKind;
using lrlm::transformer::MatrixId;
using lrlm::transformer::RecomputePolicy;

ModelConfig cfg(const char* name) { return *lrlm::transformer::preset(name); }

// Llama layout by hand: embedding and head t*n, four n*n attention maps,
// three n*m FFN maps, two norm gains per layer plus the final one.
std::uint64_t llama_total(std::uint64_t t, std::uint64_t n, std::uint64_t N, std::uint64_t m) {
  return 2 * t * n + N * (4 * n * n + 3 * n * m + 2 * n) + n;
}

TEST(Params, LlamaTotalsMatchClosedForm) {
  EXPECT_EQ(count_params(cfg("llama2-7b")).total, 6738415616ull);
  EXPECT_EQ(count_params(cfg("llama2-7b")).total, llama_total(32000, 4096, 32, 11008));
  EXPECT_EQ(count_params(cfg("llama2-13b")).total, 13015864320ull);
  EXPECT_EQ(count_params(cfg("llama2-13b")).total, llama_total(32000, 5120, 40, 13824));
  EXPECT_EQ(count_params(cfg("llama2-70b")).total, llama_total(32000, 8192, 80, 28672));
}

TEST(Params, RowsOfTheBreakdown) {
  auto r = count_params(cfg("llama2-7b"));
  const auto* q = r.find("W^Q");
  ASSERT_NE(q, nullptr);
  EXPECT_EQ(q->per_instance, 16777216u);
  EXPECT_EQ(q->instances, 32u);
  EXPECT_EQ(q->total, 536870912u);
  const auto* u = r.find("W^U");
  ASSERT_NE(u, nullptr);
  EXPECT_EQ(u->rows, 4096u);
  EXPECT_EQ(u->cols, 11008u);
  EXPECT_EQ(u->total, 1442840576u);
  EXPECT_EQ(r.find("W^D")->rows, 11008u);
  EXPECT_EQ(r.find("W^H")->total, 131072000u);
  EXPECT_EQ(r.find("W^E")->total, 131072000u);
  EXPECT_EQ(r.norm_params, 65u * 4096u);
  std::uint64_t sum = r.norm_params + r.other_params;
  for (const auto& row : r.rows) {
    if (row.matrix) sum += row.total;
  }
  EXPECT_EQ(sum, r.total);
  EXPECT_EQ(r.trainable, r.total);
  EXPECT_EQ(r.find("W^Z"), nullptr);
}

TEST(Params, LowRankClosedForms) {
  EXPECT_EQ(lowrank_count(4096, 4096, 512), 4194304u);
  LayerSpecMap attn, ffn;
  for (MatrixId id : {MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO}) attn[id] = {LinearKind::kLowRank, 512};
  for (MatrixId id : {MatrixId::kU, MatrixId::kG, MatrixId::kD}) ffn[id] = {LinearKind::kLowRank, 512};
  const auto c = cfg("llama2-7b");
  EXPECT_EQ(count_params(c, attn).matrices_total({MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO}),
            4ull * 32 * 512 * (4096 + 4096));
  EXPECT_EQ(count_params(c, ffn).matrices_total({MatrixId::kU, MatrixId::kG, MatrixId::kD}),
            3ull * 32 * 512 * (4096 + 11008));
  LayerSpecMap all;
  for (MatrixId id : lrlm::transformer::kAllMatrices) all[id] = {LinearKind::kLowRank, 512};
  const auto r = count_params(c, all);
  EXPECT_EQ(r.find("W^E")->total, 512ull * (32000 + 4096));
  EXPECT_EQ(r.total, 1316491264ull);
}

TEST(Params, LowRankMonotoneInRank) {
  const auto c = cfg("llama2-7b");
  std::uint64_t prev = 0;
  for (std::size_t r : {1, 8, 64, 512, 2048, 4095}) {
    LayerSpecMap s{{MatrixId::kQ, {LinearKind::kLowRank, r}}};
    const auto t = count_params(c, s).total;
    EXPECT_GT(t, prev);
    prev = t;
  }
  // r (n + n) = n^2 at r = n / 2: the break-even rank for a square map.
  LayerSpecMap even{{MatrixId::kQ, {LinearKind::kLowRank, 2048}}};
  EXPECT_EQ(count_params(c, even).total, count_params(c).total);
}

TEST(Params, LoraTrainableSubset) {
  LayerSpecMap s{{MatrixId::kQ, {LinearKind::kLora, 8}}, {MatrixId::kV, {LinearKind::kLora, 8}}};
  const auto r = count_params(cfg("llama2-7b"), s, "lora_finetune");
  EXPECT_EQ(r.trainable, 2ull * 32 * 8 * 8192);
  EXPECT_EQ(r.total, 6738415616ull + r.trainable);
}

TEST(Params, BlendTrainableExcludesBases) {
  LayerSpecMap s{{MatrixId::kU, {LinearKind::kBlend, 16, 0, 1.0, 10}}};
  const auto r = count_params(cfg("llama2-7b"), s, "method3");
  const std::uint64_t base = 32ull * 4096 * 11008;
  const std::uint64_t delta = 32ull * 16 * (4096 + 11008);
  EXPECT_EQ(r.total, 6738415616ull + delta);
  EXPECT_EQ(r.trainable, r.total - base);
}

TEST(Params, Gpt2KnownTotals) {
  EXPECT_EQ(count_params(cfg("gpt2-127m")).total, 124439808ull);
  EXPECT_EQ(count_params(cfg("gpt2-1.5b")).total, 1557611200ull);
  EXPECT_EQ(count_params(cfg("gpt2-1.5b")).find("W^H")->total, 0u);
}

TEST(Params, EmptyStackAndExecutableAgreement) {
  auto c = cfg("llama2-7b");
  c.layers = 0;
  EXPECT_EQ(count_params(c).total, 2ull * 32000 * 4096 + 4096);
  lrlm::transformer::ModelConfig tiny{"t", 40, 16, 2, 3, 24, 8};
  LayerSpecMap s{{MatrixId::kQ, {LinearKind::kLowRank, 4}}, {MatrixId::kV, {LinearKind::kLora, 2}},
                 {MatrixId::kD, {LinearKind::kQuantized, 0, 8}}};
  lrlm::transformer::Model<float> m(tiny, s, 1);
  EXPECT_EQ(count_params(tiny, s).total, m.param_count());
}

TEST(Memory, SevenBillionNominal) {
  MemoryOptions o;
  o.batch = 1, o.seq = 4096, o.nominal = true;
  const auto before = lrlm::linalg::allocation_stats();
  const auto r = memory_report(cfg("llama2-7b"), {}, o);
  const auto after = lrlm::linalg::allocation_stats();
  EXPECT_EQ(after.grids, before.grids);
  EXPECT_EQ(r.params_bytes, 14e9);
  EXPECT_EQ(r.grads_bytes, 14e9);
  EXPECT_EQ(r.optimizer_bytes, 84e9);
  // n l elements for six per-layer variables, h l^2 for two, m l for two,
  // plus the two boundary tensors; 2 bytes each.
  const double n = 4096, l = 4096, h = 32, m = 11008, N = 32;
  const double elems = N * (6 * n * l + 2 * h * l * l + 2 * m * l) + 2 * n * l;
  EXPECT_DOUBLE_EQ(r.intermediates_bytes, 2 * elems);
  EXPECT_NEAR(r.intermediates_bytes / 1e9, 81.0, 81.0 * 0.03);
  EXPECT_DOUBLE_EQ(r.total_bytes, r.params_bytes + r.grads_bytes + r.optimizer_bytes + r.intermediates_bytes);
}

TEST(Memory, ExactModeUsesCount) {
  MemoryOptions o;
  o.seq = 128;
  const auto r = memory_report(cfg("llama2-7b"), {}, o);
  EXPECT_EQ(r.params_bytes, 2.0 * 6738415616.0);
  EXPECT_EQ(r.optimizer_bytes, 12.0 * 6738415616.0);
}

TEST(Memory, PolicyOrdering) {
  const auto c = cfg("llama2-7b");
  MemoryOptions o;
  o.seq = 4096;
  const double all = memory_report(c, {}, o).intermediates_bytes;
  o.policy = lrlm::transformer::parse_policy("selective:qk,s");
  const auto sel = memory_report(c, {}, o);
  o.policy = RecomputePolicy::per_layer();
  const auto per = memory_report(c, {}, o);
  EXPECT_GT(all, sel.intermediates_bytes);
  EXPECT_GT(sel.intermediates_bytes, per.intermediates_bytes);
  EXPECT_EQ(sel.store_all_bytes, all);
  EXPECT_GT(per.recompute_ratio, sel.recompute_ratio);
  EXPECT_GT(sel.recompute_ratio, 0.0);
  EXPECT_LE(per.recompute_ratio, 1.0 / 3.0);
  EXPECT_EQ(recompute_flop_ratio(c, {}, 4096, RecomputePolicy::store_all()), 0.0);
}

TEST(Memory, MonotoneInBatchAndSequence) {
  const auto c = cfg("llama2-13b");
  double prev = 0.0;
  MemoryOptions one;
  one.seq = 1024;
  const double single = memory_report(c, {}, one).intermediates_bytes;
  for (std::size_t b : {1, 2, 4, 16}) {
    MemoryOptions o;
    o.batch = b, o.seq = 1024;
    const double t = memory_report(c, {}, o).intermediates_bytes;
    EXPECT_DOUBLE_EQ(t, b * single);
    EXPECT_GT(t, prev);
    prev = t;
  }
  MemoryOptions dflt, full;
  full.seq = 4096;
  EXPECT_EQ(memory_report(c, {}, dflt).intermediates_bytes, memory_report(c, {}, full).intermediates_bytes);
}

TEST(Memory, VariableRows) {
  MemoryOptions o;
  o.seq = 4096;
  const auto r = memory_report(cfg("llama2-7b"), {}, o);
  double sum = 0.0;
  for (const auto& v : r.variables) sum += v.bytes;
  EXPECT_DOUBLE_EQ(sum, r.intermediates_bytes);
  bool saw_qk = false;
  for (const auto& v : r.variables) {
    if (v.name == "qk") {
      saw_qk = true;
      EXPECT_EQ(v.elements, 32ull * 32 * 4096 * 4096);
    }
  }
  EXPECT_TRUE(saw_qk);
}

TEST(Workload, PassesAndFlops) {
  const auto w = inference_workload(100, 100, 7e9, false);
  EXPECT_EQ(w.token_passes, 14950u);
  EXPECT_DOUBLE_EQ(w.total_flops, 2 * 7e9 * 14950);
  EXPECT_EQ(inference_workload(100, 100, 7e9, true).token_passes, 199u);
  EXPECT_THROW(inference_workload(100, 0, 7e9, false), lrlm::ConfigError);
  EXPECT_NEAR(throughput_estimate(w.total_flops, HardwareProfile::phone(), Precision::kFP16), 104.65, 1e-9);
}

TEST(Workload, CacheNeverCostsMore) {
  for (std::uint64_t in : {1, 7, 100}) {
    for (std::uint64_t gen : {1, 2, 50}) {
      EXPECT_LE(inference_workload(in, gen, 1e9, true).token_passes, inference_workload(in, gen, 1e9, false).token_passes);
    }
  }
  EXPECT_EQ(inference_workload(5, 1, 1e9, true).token_passes, inference_workload(5, 1, 1e9, false).token_passes);
}

TEST(Size, QuantizedModels) {
  const auto c = cfg("gpt2-1.5b");
  EXPECT_DOUBLE_EQ(model_size_bytes(c, {}, Precision::kFP16), 2.0 * 1557611200.0);
  const double q8 = model_size_bytes(c, {}, Precision::kInt8);
  EXPECT_NEAR(q8, 1557611200.0 + 8.0 * std::ceil(1557611200.0 / 1600.0), 8.0);
  EXPECT_LT(model_size_bytes(c, {}, Precision::kInt4), q8);
  EXPECT_EQ(bits_of(Precision::kInt4), 4);
  EXPECT_EQ(parse_precision("bf16"), Precision::kFP16);
  EXPECT_FALSE(parse_precision("fp7"));
}

TEST(Hardware, Validation) {
  auto p = HardwareProfile::a100();
  EXPECT_NO_THROW(p.validate());
  p.net_MBps = 0;
  EXPECT_THROW(p.validate(), lrlm::ConfigError);
}

}  // namespace
