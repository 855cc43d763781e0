// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/costmodel/costmodel.hpp"

#include <algorithm>
#include <cmath>

#include "lrlm/common/error.hpp"
#include "lrlm/quant/quant.hpp"

namespace lrlm::costmodel {

using transformer::Family;
using transformer::LayerSpec;
using transformer::LinearKind;
using transformer::RecomputePolicy;
using transformer::TapeVar;

double bytes_per_param(Precision p) {
  switch (p) {
    case Precision::kFP32: return 4.0;
    case Precision::kFP16: return 2.0;
    case Precision::kInt8: return 1.0;
    case Precision::kInt4: return 0.5;
  }
  return 0.0;
}

int bits_of(Precision p) { return static_cast<int>(bytes_per_param(p) * 8.0); }

std::string_view precision_name(Precision p) {
  switch (p) {
    case Precision::kFP32: return "fp32";
    case Precision::kFP16: return "fp16";
    case Precision::kInt8: return "int8";
    case Precision::kInt4: return "int4";
  }
  return "?";
}

std::optional<Precision> parse_precision(std::string_view name) {
  if (name == "fp32" || name == "32") return Precision::kFP32;
  if (name == "fp16" || name == "16" || name == "bf16") return Precision::kFP16;
  if (name == "int8" || name == "8") return Precision::kInt8;
  if (name == "int4" || name == "4") return Precision::kInt4;
  return std::nullopt;
}

void HardwareProfile::validate() const {
  for (const auto& [p, r] : tflops) {
    if (!(r > 0.0)) throw ConfigError("hardware: rate for " + std::string(precision_name(p)) + " must be > 0");
  }
  if (!(gpu_mem_GB > 0.0) || !(host_link_GBps > 0.0) || !(disk_GBps > 0.0) || !(net_MBps > 0.0)) {
    throw ConfigError("hardware: all rates must be > 0");
  }
}

HardwareProfile HardwareProfile::phone() {
  HardwareProfile p;
  p.name = "phone";
  p.tflops = {{Precision::kFP32, 1.0}, {Precision::kFP16, 2.0}, {Precision::kInt8, 4.0}, {Precision::kInt4, 8.0}};
  p.gpu_mem_GB = 8.0;
  p.host_link_GBps = 8.0;
  p.disk_GBps = 1.0;
  p.net_MBps = 12.5;
  return p;
}

// ---------------------------------------------------------------- parameters

std::uint64_t lowrank_count(std::size_t fan_out, std::size_t fan_in, std::size_t rank) {
  return static_cast<std::uint64_t>(rank) * (fan_in + fan_out);
}

const ParamRow* ParamReport::find(std::string_view module) const {
  for (const auto& r : rows) {
    if (r.module == module) return &r;
  }
  return nullptr;
}

std::uint64_t ParamReport::matrices_total(std::initializer_list<MatrixId> ids) const {
  std::uint64_t s = 0;
  for (const auto& r : rows) {
    if (r.matrix && std::find(ids.begin(), ids.end(), *r.matrix) != ids.end()) s += r.total;
  }
  return s;
}

namespace {

struct MatrixCount {
  std::uint64_t stored = 0;
  std::uint64_t trainable_adapter = 0;  // lora / blend factors
  std::uint64_t base = 0;               // frozen base for lora / blend
};

MatrixCount count_matrix(std::size_t fo, std::size_t fi, const LayerSpec& s) {
  const std::uint64_t dense = static_cast<std::uint64_t>(fo) * fi;
  switch (s.kind) {
    case LinearKind::kDense:
    case LinearKind::kQuantized: return {dense, 0, 0};
    case LinearKind::kLowRank: return {lowrank_count(fo, fi, s.rank), 0, 0};
    case LinearKind::kLora:
    case LinearKind::kBlend: {
      const std::uint64_t f = lowrank_count(fo, fi, s.rank);
      return {dense + f, f, dense};
    }
  }
  return {};
}

}  // namespace

ParamReport count_params(const ModelConfig& cfg, const LayerSpecMap& specs, std::string_view method) {
  cfg.validate(true);
  const bool gpt2 = cfg.family == Family::kGpt2;
  const std::uint64_t n = cfg.dim, N = cfg.layers;
  ParamReport rep;
  std::uint64_t adapters = 0, bases = 0;

  auto add_matrix = [&](MatrixId id, std::uint64_t instances) {
    auto [fo, fi] = transformer::matrix_shape(cfg, id);
    LayerSpec s = transformer::spec_for(specs, id);
    s.validate(fo, fi, transformer::matrix_symbol(id));
    MatrixCount c = count_matrix(fo, fi, s);
    ParamRow r;
    r.module = std::string(transformer::matrix_symbol(id));
    r.matrix = id;
    r.rows = fi;
    r.cols = fo;
    r.per_instance = c.stored;
    r.instances = instances;
    r.total = c.stored * instances;
    r.kind = s.kind;
    r.rank = s.rank;
    adapters += c.trainable_adapter * instances;
    bases += c.base * instances;
    rep.rows.push_back(r);
  };

  auto add_norm = [&]() {
    ParamRow r;
    r.module = gpt2 ? "LayerNorm" : "RMSNorm";
    r.rows = n;
    r.cols = 1;
    r.per_instance = gpt2 ? 2 * n : n;
    r.instances = N;
    r.total = r.per_instance * N;
    rep.rows.push_back(r);
  };

  add_matrix(MatrixId::kE, 1);
  add_norm();
  for (MatrixId id : {MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO}) add_matrix(id, N);
  add_norm();
  add_matrix(MatrixId::kU, N);
  if (!gpt2) add_matrix(MatrixId::kG, N);
  add_matrix(MatrixId::kD, N);
  if (gpt2) {
    // Tied to the embedding.
    ParamRow r;
    r.module = std::string(transformer::matrix_symbol(MatrixId::kH));
    r.matrix = MatrixId::kH;
    r.rows = n;
    r.cols = cfg.vocab;
    rep.rows.push_back(r);
  } else {
    add_matrix(MatrixId::kH, 1);
  }

  // Two norms per layer plus the final one.
  rep.norm_params = gpt2 ? (2 * N + 1) * 2 * n : (2 * N + 1) * n;
  if (gpt2) {
    const std::uint64_t m = cfg.ffn_dim;
    rep.other_params = static_cast<std::uint64_t>(cfg.max_seq) * n + N * (4 * n + m + n);
  }
  for (const auto& r : rep.rows) {
    if (r.matrix) rep.total += r.total;
  }
  rep.total += rep.norm_params + rep.other_params;

  if (method == "lora_finetune") {
    rep.trainable = adapters;
  } else if (method == "method3") {
    rep.trainable = rep.total - bases;
  } else {
    rep.trainable = rep.total;
  }
  return rep;
}

// ---------------------------------------------------------------- memory

namespace {

struct VarShape {
  TapeVar var;
  bool per_layer;
};

// Order of the intermediate-variable table.
constexpr VarShape kVars[] = {
    {TapeVar::kInput, false},      {TapeVar::kNormedInput, true}, {TapeVar::kKey, true},
    {TapeVar::kQuery, true},       {TapeVar::kValue, true},       {TapeVar::kScores, true},
    {TapeVar::kProbs, true},       {TapeVar::kAttnOut, true},     {TapeVar::kNormedAttnOut, true},
    {TapeVar::kUp, true},          {TapeVar::kGate, true},        {TapeVar::kDown, false},
};

constexpr double kActivationBytes = 2.0;

std::uint64_t per_instance_elements(const ModelConfig& cfg, TapeVar v, std::uint64_t l) {
  const std::uint64_t n = cfg.dim, h = cfg.heads, m = cfg.ffn_dim;
  switch (v) {
    case TapeVar::kScores:
    case TapeVar::kProbs: return h * l * l;
    case TapeVar::kUp:
    case TapeVar::kGate: return m * l;
    default: return n * l;
  }
}

// Matmul FLOPs of the op producing `v`, per layer and sample.
double producer_flops(const ModelConfig& cfg, TapeVar v, double l) {
  const double n = static_cast<double>(cfg.dim), m = static_cast<double>(cfg.ffn_dim);
  switch (v) {
    case TapeVar::kQuery:
    case TapeVar::kKey:
    case TapeVar::kValue: return 2.0 * n * n * l;
    case TapeVar::kScores: return 2.0 * n * l * l;
    case TapeVar::kHeads: return 2.0 * n * l * l;
    case TapeVar::kAttnOut: return 2.0 * n * n * l + 2.0 * n * l * l;
    case TapeVar::kUp:
    case TapeVar::kGate:
    case TapeVar::kDown: return 2.0 * n * m * l;
    default: return 0.0;
  }
}

double layer_forward_flops(const ModelConfig& cfg, const LayerSpecMap& specs, double l) {
  double f = 0.0;
  for (MatrixId id : transformer::kBlockMatrices) {
    if (cfg.family == Family::kGpt2 && id == MatrixId::kG) continue;
    auto [fo, fi] = transformer::matrix_shape(cfg, id);
    const LayerSpec s = transformer::spec_for(specs, id);
    const double per_row = s.kind == LinearKind::kLowRank ? static_cast<double>(lowrank_count(fo, fi, s.rank))
                                                          : static_cast<double>(fo) * fi;
    f += 2.0 * per_row * l;
  }
  return f + 4.0 * static_cast<double>(cfg.dim) * l * l;
}

}  // namespace

double recompute_flop_ratio(const ModelConfig& cfg, const LayerSpecMap& specs, std::size_t seq,
                            const RecomputePolicy& policy) {
  const double l = static_cast<double>(seq == 0 ? cfg.max_seq : seq);
  const double N = static_cast<double>(cfg.layers);
  const double layer = layer_forward_flops(cfg, specs, l);
  const double head = cfg.family == Family::kGpt2 ? 0.0 : 2.0 * static_cast<double>(cfg.vocab) * cfg.dim * l;
  const double forward = N * layer + head;
  if (forward == 0.0) return 0.0;
  double extra = 0.0;
  switch (policy.variant) {
    case RecomputePolicy::Variant::kStoreAll: break;
    case RecomputePolicy::Variant::kPerLayer: extra = N * layer; break;
    case RecomputePolicy::Variant::kSelective:
      for (TapeVar v : policy.drop) extra += N * producer_flops(cfg, v, l);
      break;
  }
  return extra / (3.0 * forward);
}

MemoryReport memory_report(const ModelConfig& cfg, const LayerSpecMap& specs, const MemoryOptions& opts) {
  if (opts.batch == 0) throw ConfigError("memory: batch must be >= 1");
  const std::uint64_t l = opts.seq == 0 ? cfg.max_seq : opts.seq;
  if (l == 0) throw ConfigError("memory: seq must be >= 1");
  const ParamReport pr = count_params(cfg, specs, opts.method);

  MemoryReport rep;
  rep.bytes_per_param = bytes_per_param(opts.precision);
  const bool nominal = opts.nominal && cfg.nominal_params > 0.0 && specs.empty();
  rep.param_count = nominal ? cfg.nominal_params : static_cast<double>(pr.total);
  rep.trainable_count = nominal ? cfg.nominal_params : static_cast<double>(pr.trainable);
  rep.params_bytes = rep.param_count * rep.bytes_per_param;
  rep.grads_bytes = rep.trainable_count * rep.grad_bytes_per_param;
  rep.optimizer_bytes = rep.trainable_count * rep.optimizer_bytes_per_param;

  const double B = static_cast<double>(opts.batch);
  const std::uint64_t N = cfg.layers;
  double layer_set = 0.0;  // one layer's variables, whole batch
  double dropped_working = 0.0;
  for (const auto& vs : kVars) {
    VariableRow r;
    r.name = std::string(transformer::tape_var_name(vs.var));
    r.per_layer = vs.per_layer;
    const std::uint64_t one = per_instance_elements(cfg, vs.var, l);
    r.elements = vs.per_layer ? one * N : one;
    r.bytes = static_cast<double>(r.elements) * kActivationBytes * B;
    rep.store_all_bytes += r.bytes;
    switch (opts.policy.variant) {
      case RecomputePolicy::Variant::kStoreAll: r.kept = true; break;
      case RecomputePolicy::Variant::kPerLayer: r.kept = !vs.per_layer; break;
      case RecomputePolicy::Variant::kSelective: r.kept = !vs.per_layer || opts.policy.keeps(vs.var); break;
    }
    if (vs.per_layer && N > 0) {
      const double one_bytes = static_cast<double>(one) * kActivationBytes * B;
      layer_set += one_bytes;
      if (!r.kept) {
        const bool per_head = vs.var == TapeVar::kScores || vs.var == TapeVar::kProbs;
        dropped_working += per_head && cfg.heads > 0 ? one_bytes / static_cast<double>(cfg.heads) : one_bytes;
      }
    }
    if (r.kept) rep.intermediates_bytes += r.bytes;
    rep.variables.push_back(r);
  }
  if (opts.policy.variant == RecomputePolicy::Variant::kPerLayer) {
    rep.intermediates_bytes += layer_set;
  } else if (opts.policy.variant == RecomputePolicy::Variant::kSelective) {
    rep.intermediates_bytes += dropped_working;
  }
  rep.recompute_ratio = recompute_flop_ratio(cfg, specs, l, opts.policy);
  rep.total_bytes = rep.params_bytes + rep.grads_bytes + rep.optimizer_bytes + rep.intermediates_bytes;
  return rep;
}

// ---------------------------------------------------------------- flops and workload

double flops_per_token(double param_count) { return 2.0 * param_count; }

WorkloadReport inference_workload(std::uint64_t l_in, std::uint64_t gen, double param_count, bool kv_cache) {
  if (gen == 0) throw ConfigError("workload: gen must be >= 1");
  WorkloadReport w;
  w.param_count = param_count;
  w.flops_per_token = flops_per_token(param_count);
  w.kv_cache = kv_cache;
  w.token_passes = kv_cache ? l_in + (gen - 1) : gen * l_in + gen * (gen - 1) / 2;
  w.total_flops = w.flops_per_token * static_cast<double>(w.token_passes);
  return w;
}

double throughput_estimate(double total_flops, const HardwareProfile& profile, Precision precision) {
  auto it = profile.tflops.find(precision);
  if (it == profile.tflops.end()) {
    throw ConfigError("hardware profile '" + profile.name + "' has no rate for " +
                      std::string(precision_name(precision)));
  }
  if (!(it->second > 0.0)) throw ConfigError("hardware: rate must be > 0");
  return total_flops / (it->second * 1e12);
}

double model_size_bytes(const ModelConfig& cfg, const LayerSpecMap& specs, Precision precision) {
  const double count = static_cast<double>(count_params(cfg, specs).total);
  const int bits = bits_of(precision);
  if (bits >= 16) return count * bytes_per_param(precision);
  return quant::quantized_size_bytes(count, bits, cfg.dim);
}

}  // namespace lrlm::costmodel
