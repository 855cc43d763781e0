// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrlm/trainer/adamw.hpp"
#include "lrlm/trainer/data.hpp"
#include "lrlm/transformer/model.hpp"

namespace lrlm::trainer {

using transformer::Model;
using transformer::RecomputePolicy;

/// dense: plain training. method1: low-rank layers from random init.
/// method2: low-rank layers initialised from a decomposed donor.
/// method3: blend layers, alpha decays to 0, W frozen.
/// lora_finetune: adapters only, everything else frozen.
enum class Method { kDense, kMethod1, kMethod2, kMethod3, kLoraFinetune };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);

struct TrainConfig {
  AdamWConfig optim;
  std::size_t steps = 100;
  std::size_t batch = 4;
  std::size_t seq = 64;
  std::size_t micro_batches = 1;
  Method method = Method::kDense;
  RecomputePolicy recompute;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Throws ConfigError when the model's layers do not fit the method.
void check_method(const Model<float>& model, Method method);

/// Freezes every tensor except LoRA down/up factors.
void freeze_for_lora(Model<float>& model);

struct StepResult {
  double loss = 0.0;
  double alpha = 1.0;
  std::size_t peak_tape_bytes = 0;
  double recompute_ratio = 0.0;
};

/// Mean gradient of the training loss over `batch` (grouped as in
/// train_step), without updating anything. Fills `stats` when given.
transformer::Gradients<float> batch_gradients(const Model<float>& model, const Batch& batch, const TrainConfig& cfg,
                                              StepResult* stats = nullptr);

/// One optimizer step over `batch`: the batch is split into
/// cfg.micro_batches contiguous groups, per-group gradients (window means) are
/// summed and divided by the group count, then AdamW updates the trainable set.
StepResult train_step(Model<float>& model, const Batch& batch, const TrainConfig& cfg, AdamWState& state);

/// Mean loss of the model on a batch, no update.
double evaluate(const Model<float>& model, const Batch& batch);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double alpha = 1.0;
  std::size_t peak_tape_bytes = 0;
};

struct TrainResult {
  std::vector<StepRecord> records;
  double recompute_ratio = 0.0;
};

/// Header line of the metrics log.
inline constexpr std::string_view kMetricsHeader = "step,loss,lr,alpha,peak_tape_bytes";
std::string format_record(const StepRecord& r);

/// Runs cfg.steps steps on windows sampled from `corpus`, writing one metrics
/// line per step to `metrics` when given.
TrainResult train(Model<float>& model, std::span<const int> corpus, const TrainConfig& cfg, std::ostream* metrics = nullptr,
                  AdamWState* state = nullptr);

/// Blend coefficient of the first blend layer, 1 when there is none.
double model_alpha(const Model<float>& model);

// Method constructors.

transformer::LayerSpecMap lowrank_specs(std::size_t rank, std::span<const transformer::MatrixId> targets);

/// Wraps each targeted layer of a pretrained model as a blend layer whose base
/// is the current weight and whose parallel path is freshly initialised.
Model<float> to_blend(const Model<float>& pretrained, std::size_t rank, double start_alpha, std::size_t end_step,
                      std::uint64_t seed, std::span<const transformer::MatrixId> targets);

/// Replaces targeted layers with LoRA adapters (optionally over a quantized
/// base) and freezes everything else.
Model<float> attach_lora(const Model<float>& base, std::size_t rank, int base_bits, std::uint64_t seed,
                         std::span<const transformer::MatrixId> targets);

/// Folds every adapter into a dense layer. A quantized base is rejected
/// unless `dequantize` is set.
Model<float> merge_adapters(const Model<float>& model, bool dequantize);

/// Replaces targeted dense layers by row-quantized ones.
Model<float> quantize_model(const Model<float>& model, int bits, std::span<const transformer::MatrixId> targets);

inline constexpr transformer::MatrixId kDefaultLoraTargets[] = {transformer::MatrixId::kQ, transformer::MatrixId::kV};

}  // namespace lrlm::trainer
