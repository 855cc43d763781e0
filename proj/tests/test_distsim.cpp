// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "lrlm/common/error.hpp"
#include "lrlm/distsim/distsim.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"

namespace {

using namespace lrlm::distsim;
using lrlm::trainer::AdamWState;
using lrlm::trainer::Batch;
using lrlm::trainer::Model;
using lrlm::trainer::TrainConfig;

TEST(Pipeline, UniformCostUtilization) {
  for (std::size_t n = 1; n <= 16; ++n) {
    for (std::size_t m = 1; m <= 64; ++m) {
      const auto p = pipeline_schedule(n, m, 1.0);
      const double want = static_cast<double>(m) / static_cast<double>(n + m - 1);
      EXPECT_DOUBLE_EQ(p.utilization, want) << n << "," << m;
      EXPECT_DOUBLE_EQ(p.makespan, 3.0 * static_cast<double>(n + m - 1));
      EXPECT_EQ(p.events.size(), 2 * n * m);
      EXPECT_EQ(pipeline_utilization(n, m), want);
    }
  }
  EXPECT_EQ(pipeline_utilization(4, 1), 0.25);
  EXPECT_NEAR(pipeline_utilization(4, 8), 8.0 / 11.0, 1e-15);
}

TEST(Pipeline, DependenciesAndExclusiveStages) {
  for (auto [n, m, f, b] : {std::tuple{4ul, 8ul, 1.0, 2.0}, {3ul, 5ul, 1.0, 0.5}, {6ul, 2ul, 2.5, 7.0}}) {
    const auto p = pipeline_schedule(n, m, f, b);
    std::map<std::tuple<std::size_t, std::size_t, int>, PipelineEvent> by;
    for (const auto& e : p.events) {
      EXPECT_NEAR(e.end - e.start, e.phase == Phase::kForward ? f : b, 1e-12);
      by[{e.stage, e.micro_batch, static_cast<int>(e.phase)}] = e;
    }
    ASSERT_EQ(by.size(), 2 * n * m);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < m; ++k) {
        const auto& fw = by[{s, k, 0}];
        const auto& bw = by[{s, k, 1}];
        if (s > 0) {
          EXPECT_GE(fw.start, (by[{s - 1, k, 0}].end));
        }
        if (s + 1 < n) {
          EXPECT_GE(bw.start, (by[{s + 1, k, 1}].end));
        } else {
          EXPECT_GE(bw.start, fw.end);
        }
      }
      std::vector<std::pair<double, double>> spans;
      for (const auto& e : p.events) {
        if (e.stage == s) spans.emplace_back(e.start, e.end);
      }
      std::sort(spans.begin(), spans.end());
      for (std::size_t i = 1; i < spans.size(); ++i) EXPECT_GE(spans[i].first, spans[i - 1].second);
    }
    double busy = 0.0;
    for (const auto& e : p.events) busy += e.end - e.start;
    EXPECT_NEAR(p.busy, busy, 1e-9);
    EXPECT_NEAR(p.utilization, busy / (n * p.makespan), 1e-12);
  }
}

TEST(Pipeline, GanttAndErrors) {
  const auto p = pipeline_schedule(2, 2, 1.0, 1.0);
  const std::string g = p.gantt();
  EXPECT_EQ(std::count(g.begin(), g.end(), '\n'), 2);
  EXPECT_NE(g.find("F0"), std::string::npos);
  EXPECT_NE(g.find("B1"), std::string::npos);
  EXPECT_NE(g.find(".."), std::string::npos);
  EXPECT_THROW(pipeline_schedule(0, 1, 1.0), lrlm::ConfigError);
  EXPECT_THROW(pipeline_schedule(1, 0, 1.0), lrlm::ConfigError);
  EXPECT_THROW(pipeline_schedule(1, 1, 0.0), lrlm::ConfigError);
}

TEST(Shard, SeventyBillion) {
  const auto p = shard_plan(140e9, 70e9, 8);
  EXPECT_EQ(p.per_gpu_bytes, 262.5e9);
  EXPECT_EQ(shard_plan(140e9, 70e9, 1).per_gpu_bytes, 1120e9);
  EXPECT_EQ(p.grads_bytes, 140e9);
  EXPECT_EQ(p.optimizer_bytes, 840e9);
}

TEST(Shard, ShardsPartitionExactly) {
  for (std::size_t g : {1, 3, 7, 8, 13}) {
    const auto p = shard_plan(1000003.0, 500001.0, g);
    ASSERT_EQ(p.grad_shards.size(), g);
    std::uint64_t sg = 0, so = 0;
    for (auto x : p.grad_shards) sg += x;
    for (auto x : p.optimizer_shards) so += x;
    EXPECT_EQ(sg, 1000002u);
    EXPECT_EQ(so, 6000012u);
    const auto [lo, hi] = std::minmax_element(p.optimizer_shards.begin(), p.optimizer_shards.end());
    EXPECT_LE(*hi - *lo, 1u);
  }
  EXPECT_THROW(shard_plan(1.0, 1.0, 0), lrlm::ConfigError);
}

TEST(Offload, PeakIsLargestPhase) {
  PhaseFootprint c{14e9, 14e9, 84e9, 81e9};
  const auto r = offload_peak(c);
  EXPECT_EQ(r.forward, 95e9);
  EXPECT_EQ(r.backward, 109e9);
  EXPECT_EQ(r.update, 112e9);
  EXPECT_EQ(r.peak, 112e9);
  EXPECT_EQ(r.naive, 193e9);
  EXPECT_LE(r.peak, r.naive);
}

TEST(Federated, CommunicationVolumes) {
  FederatedConfig c;
  c.nodes = 4, c.payload_bytes = 14e9, c.iterations = 296000;
  const auto r = federated_comm_report(c);
  EXPECT_EQ(r.center_per_iter, 84e9);
  EXPECT_EQ(r.worker_per_iter, 28e9);
  EXPECT_DOUBLE_EQ(r.center_total, 84e9 * 296000);
  EXPECT_NEAR(r.center_total / 1e15, 24.864, 1e-9);
  EXPECT_DOUBLE_EQ(r.center_seconds, r.center_total / 125e6);
  c.payload_bytes = 4.2e6 * 2, c.iterations = 1;
  EXPECT_DOUBLE_EQ(federated_comm_report(c).center_per_iter, 50.4e6);
  c.nodes = 1;
  EXPECT_THROW(federated_comm_report(c), lrlm::ConfigError);
}

lrlm::transformer::ModelConfig tiny() {
  lrlm::transformer::ModelConfig c;
  c.name = "tiny";
  c.vocab = 32, c.dim = 16, c.heads = 2, c.layers = 2, c.ffn_dim = 32, c.max_seq = 16;
  return c;
}

std::vector<Batch> batches(std::size_t k, std::size_t windows, std::uint64_t seed) {
  lrlm::linalg::SplitMix64 rng(seed);
  std::vector<int> toks(300);
  for (auto& t : toks) t = static_cast<int>(rng.below(32));
  std::vector<Batch> out;
  lrlm::trainer::BatchSampler s(toks, windows, 8, seed);
  for (std::size_t i = 0; i < k; ++i) out.push_back(s.next());
  return out;
}

bool bit_equal(Model<float>& a, Model<float>& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].value->values().begin(), pa[i].value->values().end(), pb[i].value->values().begin())) {
      return false;
    }
  }
  return true;
}

TrainConfig round_cfg() {
  TrainConfig c;
  c.batch = 2, c.seq = 8;
  c.optim.lr = 1e-2;
  return c;
}

TEST(FederatedRound, OneWorkerEqualsLocalStep) {
  Model<float> center(tiny(), {}, 3);
  Model<float> local = center;
  std::vector<Model<float>> workers{center};
  AdamWState s1, s2;
  const auto b = batches(1, 2, 5);
  for (int r = 0; r < 3; ++r) {
    federated_round(center, s1, workers, std::span<const Batch>(b), FedMode::kFull, round_cfg());
    lrlm::trainer::train_step(local, b[0], round_cfg(), s2);
  }
  EXPECT_TRUE(bit_equal(center, local));
  EXPECT_TRUE(bit_equal(center, workers[0]));
}

TEST(FederatedRound, MatchesCentralizedTraining) {
  const std::size_t k = 3;
  Model<float> center(tiny(), {}, 4);
  Model<float> central = center;
  std::vector<Model<float>> workers(k, center);
  AdamWState fs, cs;
  for (int r = 0; r < 3; ++r) {
    const auto b = batches(k, 2, 10 + r);
    Batch all;
    for (const auto& x : b) {
      all.inputs.insert(all.inputs.end(), x.inputs.begin(), x.inputs.end());
      all.targets.insert(all.targets.end(), x.targets.begin(), x.targets.end());
    }
    auto cfg = round_cfg();
    const auto res = federated_round(center, fs, workers, std::span<const Batch>(b), FedMode::kFull, cfg);
    cfg.batch = 2 * k;
    cfg.micro_batches = k;
    const auto cr = lrlm::trainer::train_step(central, all, cfg, cs);
    EXPECT_NEAR(res.loss, cr.loss, 1e-6);
  }
  auto pa = center.parameters();
  auto pb = central.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double scale = std::max(1.0, lrlm::linalg::frobenius_norm(*pb[i].value));
    EXPECT_LE(lrlm::linalg::max_abs_diff(*pa[i].value, *pb[i].value) / scale, 1e-6) << pa[i].name;
  }
}

TEST(FederatedRound, LoraSendsOnlyAdapters) {
  Model<float> base(tiny(), {}, 4);
  auto center = lrlm::trainer::attach_lora(base, 2, 0, 1, lrlm::trainer::kDefaultLoraTargets);
  const auto frozen_before = center;
  std::vector<Model<float>> workers(2, center);
  AdamWState st;
  const auto b = batches(2, 2, 3);
  const auto r = federated_round(center, st, workers, std::span<const Batch>(b), FedMode::kLora, round_cfg());
  // Per direction: two layers, Q and V, down (2 x 16) and up (16 x 2), 4 bytes each.
  EXPECT_EQ(r.payload_bytes, 2u * 2u * (32u + 32u) * 4u);
  EXPECT_EQ(r.worker_bytes, 2 * r.payload_bytes);
  EXPECT_EQ(r.center_bytes, 2 * 2 * r.payload_bytes);
  for (const auto& t : r.log) {
    const bool adapter = t.tensor.find(".down") != std::string::npos || t.tensor.find(".up") != std::string::npos;
    EXPECT_TRUE(adapter) << t.tensor;
  }
  auto names = transmitted_tensors(center, FedMode::kLora);
  EXPECT_EQ(names.size(), 8u);
  Model<float> dense(tiny(), {}, 1);
  EXPECT_THROW(transmitted_tensors(dense, FedMode::kLora), lrlm::ConfigError);
}

TEST(FederatedRound, DivergedReplicaIsNamed) {
  Model<float> center(tiny(), {}, 3);
  std::vector<Model<float>> workers(2, center);
  workers[1].final_norm()(0, 3) += 1.0f;
  AdamWState st;
  const auto b = batches(2, 2, 5);
  try {
    federated_round(center, st, workers, std::span<const Batch>(b), FedMode::kFull, round_cfg());
    FAIL();
  } catch (const lrlm::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("final_norm"), std::string::npos) << e.what();
  }
  EXPECT_EQ(st.steps(), 0u);
  std::vector<Model<float>> none;
  EXPECT_THROW(federated_round(center, st, none, std::span<const Batch>(), FedMode::kFull, round_cfg()),
               lrlm::ConfigError);
}

}  // namespace
