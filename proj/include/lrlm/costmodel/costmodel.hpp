// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter, memory, FLOP and workload accounting. Nothing here
// allocates model tensors.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrlm/transformer/config.hpp"
#include "lrlm/transformer/model.hpp"

namespace lrlm::costmodel {

using transformer::LayerSpecMap;
using transformer::MatrixId;
using transformer::ModelConfig;

enum class Precision : std::uint8_t { kFP32, kFP16, kInt8, kInt4 };

double bytes_per_param(Precision p);
int bits_of(Precision p);
std::string_view precision_name(Precision p);
std::optional<Precision> parse_precision(std::string_view name);

struct HardwareProfile {
  std::string name = "a100";
  std::map<Precision, double> tflops{{Precision::kFP32, 19.5}, {Precision::kFP16, 312.0}, {Precision::kInt8, 624.0},
                                     {Precision::kInt4, 1248.0}};
  double gpu_mem_GB = 80.0;
  double host_link_GBps = 32.0;
  double disk_GBps = 2.0;
  double net_MBps = 125.0;

  /// Throws ConfigError when a rate is not positive.
  void validate() const;

  static HardwareProfile a100() { return {}; }
  /// A 2 TFLOPS device.
  static HardwareProfile phone();
};

// ---------------------------------------------------------------- parameters

struct ParamRow {
  std::string module;  // "W^Q", "RMSNorm", ...
  std::optional<MatrixId> matrix;
  std::size_t rows = 0;  // displayed shape (fan_in x fan_out for matrices)
  std::size_t cols = 0;
  std::uint64_t per_instance = 0;
  std::uint64_t instances = 0;
  std::uint64_t total = 0;
  transformer::LinearKind kind = transformer::LinearKind::kDense;
  std::size_t rank = 0;
};

struct ParamReport {
  std::vector<ParamRow> rows;
  /// Every norm gain (and bias) in the model: both per-layer rows plus the final norm.
  std::uint64_t norm_params = 0;
  /// Parameters outside rows and norms (gpt2 biases and positions).
  std::uint64_t other_params = 0;
  std::uint64_t total = 0;
  /// Parameters receiving gradients for the given training method.
  std::uint64_t trainable = 0;

  const ParamRow* find(std::string_view module) const;
  std::uint64_t matrices_total(std::initializer_list<MatrixId> ids) const;
};

/// Exact integer counts. Low-rank, LoRA and blend matrices count
/// r (fan_in + fan_out) for their factors (plus the frozen base for LoRA and
/// blend); quantized matrices count one parameter per code.
/// `method` selects the trainable subset: "lora_finetune" trains adapters only,
/// "method3" everything except blend bases, otherwise everything.
ParamReport count_params(const ModelConfig& cfg, const LayerSpecMap& specs = {}, std::string_view method = "dense");

/// r (fan_in + fan_out)
std::uint64_t lowrank_count(std::size_t fan_out, std::size_t fan_in, std::size_t rank);

// ---------------------------------------------------------------- memory

struct VariableRow {
  std::string name;  // tape variable name
  std::uint64_t elements = 0;  // whole model, one sample
  double bytes = 0.0;          // whole model, whole batch
  bool per_layer = true;
  bool kept = true;
};

struct MemoryOptions {
  std::size_t batch = 1;
  std::size_t seq = 0;  // 0: cfg.max_seq
  Precision precision = Precision::kFP16;
  transformer::RecomputePolicy policy;
  std::string method = "dense";
  /// Price params/grads/optimizer with cfg.nominal_params instead of the exact count.
  bool nominal = false;
};

struct MemoryReport {
  double param_count = 0.0;
  double trainable_count = 0.0;
  double params_bytes = 0.0;
  double grads_bytes = 0.0;
  double optimizer_bytes = 0.0;
  double intermediates_bytes = 0.0;
  double total_bytes = 0.0;
  std::vector<VariableRow> variables;
  /// Intermediates if everything were stored.
  double store_all_bytes = 0.0;
  /// Extra forward FLOPs of recomputation relative to forward + backward.
  double recompute_ratio = 0.0;
  double bytes_per_param = 2.0;
  double grad_bytes_per_param = 2.0;
  double optimizer_bytes_per_param = 12.0;
};

/// Activations are priced at 2 bytes per element. Per-layer variables
/// (x~e, q, k, v, xo, x~o: n l; qk^T, s: h l^2; xu, xg: m l) occur N times;
/// the layer-boundary tensors xe and xd are counted once each.
/// StoreAll keeps everything. PerLayer keeps the boundary tensors plus one
/// layer's working set during recomputation. Selective drops the named
/// variables, adding back the working set needed to rebuild them (one head
/// for qk^T and s, one layer otherwise).
MemoryReport memory_report(const ModelConfig& cfg, const LayerSpecMap& specs, const MemoryOptions& opts);

/// Recompute FLOPs relative to forward + backward (backward = 2 x forward).
/// Forward = every linear map plus the attention products q k^T and s v.
double recompute_flop_ratio(const ModelConfig& cfg, const LayerSpecMap& specs, std::size_t seq,
                            const transformer::RecomputePolicy& policy);

// ---------------------------------------------------------------- flops and workload

/// Two operations per parameter.
double flops_per_token(double param_count);

struct WorkloadReport {
  double param_count = 0.0;
  double flops_per_token = 0.0;
  std::uint64_t token_passes = 0;
  double total_flops = 0.0;
  bool kv_cache = false;
  std::map<Precision, double> seconds;  // filled by workload_with_times
};

/// Without a cache the i-th generated token re-runs the whole prefix:
/// sum_{i<gen} (l_in + i) passes. With a cache: l_in + gen - 1.
WorkloadReport inference_workload(std::uint64_t l_in, std::uint64_t gen, double param_count, bool kv_cache);

/// total_flops / peak rate. A lower bound.
double throughput_estimate(double total_flops, const HardwareProfile& profile, Precision precision);

/// Storage of every parameter at `precision`; below 16 bits per-row scale and
/// offset (8 bytes per row of cfg.dim weights) are added.
double model_size_bytes(const ModelConfig& cfg, const LayerSpecMap& specs, Precision precision);

}  // namespace lrlm::costmodel
