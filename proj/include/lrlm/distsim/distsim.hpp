// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Planners for pipeline parallelism, optimizer-state sharding and offload,
// federated communication, and an in-process federated training round.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrlm/trainer/trainer.hpp"

namespace lrlm::distsim {

// ---------------------------------------------------------------- pipeline

enum class Phase : std::uint8_t { kForward, kBackward };

struct PipelineEvent {
  std::size_t stage = 0;
  std::size_t micro_batch = 0;
  Phase phase = Phase::kForward;
  double start = 0.0;
  double end = 0.0;
};

struct PipelinePlan {
  std::size_t stages = 0;
  std::size_t micro_batches = 0;
  double forward_cost = 0.0;
  double backward_cost = 0.0;
  std::vector<PipelineEvent> events;
  double makespan = 0.0;
  double busy = 0.0;
  double utilization = 0.0;

  /// One row per stage; each cell is one time unit ("F3", "B3", ".." idle).
  std::string gantt(double unit = 0.0) const;
};

/// GPipe fill-drain: every forward flows down the stages, then every backward
/// flows back up in reverse micro-batch order. `b` <= 0 means 2 f.
PipelinePlan pipeline_schedule(std::size_t stages, std::size_t micro_batches, double f, double b = 0.0);

/// M / (N + M - 1)
double pipeline_utilization(std::size_t stages, std::size_t micro_batches);

// ---------------------------------------------------------------- sharding

struct ShardPlan {
  std::size_t gpus = 1;
  double params_bytes = 0.0;     // replicated on every GPU
  double grads_bytes = 0.0;      // whole model, before sharding
  double optimizer_bytes = 0.0;  // whole model, before sharding
  /// Byte-exact split of grads and optimizer state; shards differ by at most one byte.
  std::vector<std::uint64_t> grad_shards;
  std::vector<std::uint64_t> optimizer_shards;
  double per_gpu_bytes = 0.0;
  /// Per iteration and GPU: reduce-scatter of gradients, then all-gather of
  /// updated parameters.
  double scatter_bytes = 0.0;
  double gather_bytes = 0.0;
};

/// model_bytes: 16-bit parameter storage. trainable_params: number of trainable
/// parameters; grads take 2 bytes and optimizer state 12 bytes each.
ShardPlan shard_plan(double model_bytes, double trainable_params, std::size_t gpus);

// ---------------------------------------------------------------- offload

struct PhaseFootprint {
  double params = 0.0;
  double grads = 0.0;
  double optimizer = 0.0;
  double intermediates = 0.0;
};

struct OffloadReport {
  double forward = 0.0;
  double backward = 0.0;
  double update = 0.0;
  double peak = 0.0;
  double naive = 0.0;  // everything resident at once
};

/// Optimizer state is resident only during the update, intermediates only
/// during forward and backward, gradients from backward on.
OffloadReport offload_peak(const PhaseFootprint& c);

// ---------------------------------------------------------------- federated

struct FederatedConfig {
  std::size_t nodes = 4;  // including the center
  double payload_bytes = 0.0;
  std::uint64_t iterations = 1;
  double net_MBps = 125.0;
};

struct FederatedReport {
  double center_per_iter = 0.0;
  double worker_per_iter = 0.0;
  double center_total = 0.0;
  double worker_total = 0.0;
  double center_seconds = 0.0;  // total center volume at net_MBps
  double worker_seconds = 0.0;
};

FederatedReport federated_comm_report(const FederatedConfig& cfg);

enum class FedMode { kFull, kLora };

std::string_view fed_mode_name(FedMode m);

struct Transfer {
  std::size_t worker = 0;
  bool to_worker = true;  // broadcast; false for gather
  std::string tensor;
  std::uint64_t bytes = 0;
};

struct FederatedRoundResult {
  double loss = 0.0;  // mean of worker losses
  std::vector<Transfer> log;
  std::uint64_t payload_bytes = 0;  // one direction, one worker
  std::uint64_t center_bytes = 0;
  std::uint64_t worker_bytes = 0;  // per worker
};

/// Tensors crossing the wire: every parameter in full mode, the trainable
/// LoRA factors in lora mode.
std::vector<std::string> transmitted_tensors(trainer::Model<float>& model, FedMode mode);

/// One synchronous round: broadcast the center's transmitted tensors, compute
/// each worker's mean gradient on its batch (in parallel), gather, average in
/// worker order, apply one AdamW step on the center, and copy the result back
/// to every worker. Every replica must equal the center when the round starts.
FederatedRoundResult federated_round(trainer::Model<float>& center, trainer::AdamWState& state,
                                     std::vector<trainer::Model<float>>& workers,
                                     std::span<const trainer::Batch> batches, FedMode mode,
                                     const trainer::TrainConfig& cfg);

}  // namespace lrlm::distsim
