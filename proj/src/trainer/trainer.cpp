// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/trainer/trainer.hpp"

#include <array>
#include <cstdio>
#include <functional>

#include "lrlm/common/error.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"
#include "lrlm/transformer/ops.hpp"

namespace lrlm::trainer {

using transformer::BlendLinear;
using transformer::DenseLinear;
using transformer::Gradients;
using transformer::LayerSpec;
using transformer::LinearKind;
using transformer::LinearLayer;
using transformer::LoraLinear;
using transformer::MatrixId;

namespace {

constexpr std::array<std::string_view, 5> kMethodNames{"dense", "method1", "method2", "method3", "lora_finetune"};

// Visits the head and every decoder-layer linear map.
template <typename M, typename Fn>
void for_each_linear(M& model, Fn&& fn) {
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    for (MatrixId id : transformer::kBlockMatrices) fn(l, id, model.linear(l, id));
  }
  fn(std::size_t{0}, MatrixId::kH, model.linear(0, MatrixId::kH));
}

bool targeted(std::span<const MatrixId> targets, MatrixId id) {
  for (MatrixId t : targets) {
    if (t == id) return true;
  }
  return false;
}

void check_targets(std::span<const MatrixId> targets) {
  if (targets.empty()) throw ConfigError("no target matrices given");
  for (MatrixId t : targets) {
    if (t == MatrixId::kE) throw ConfigError("the embedding stays dense in executable models");
  }
}

std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer, MatrixId id) {
  return linalg::derive_seed(seed, 1000 + 16 * layer + static_cast<std::size_t>(id));
}

}  // namespace

std::string_view method_name(Method m) { return kMethodNames.at(static_cast<std::size_t>(m)); }

std::optional<Method> parse_method(std::string_view name) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (kMethodNames[i] == name) return static_cast<Method>(i);
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  optim.validate();
  if (batch == 0 || seq == 0) throw ConfigError("train: batch and seq must be positive");
  if (micro_batches == 0 || micro_batches > batch) throw ConfigError("train: micro_batches must lie in [1, batch]");
}

void check_method(const Model<float>& model, Method method) {
  std::array<std::size_t, 5> kinds{};
  for_each_linear(model, [&](std::size_t, MatrixId, const LinearLayer<float>& lin) {
    ++kinds[static_cast<std::size_t>(lin.kind())];
  });
  const auto count = [&](LinearKind k) { return kinds[static_cast<std::size_t>(k)]; };
  const std::string m(method_name(method));
  switch (method) {
    case Method::kDense:
      if (count(LinearKind::kDense) != kinds[0] + kinds[1] + kinds[2] + kinds[3] + kinds[4]) {
        throw ConfigError("method dense requires every linear layer to be dense");
      }
      return;
    case Method::kMethod1:
    case Method::kMethod2:
      if (count(LinearKind::kLowRank) == 0) throw ConfigError("method " + m + " requires low-rank layers");
      if (count(LinearKind::kLora) + count(LinearKind::kBlend) != 0) {
        throw ConfigError("method " + m + " does not train adapter or blend layers");
      }
      return;
    case Method::kMethod3:
      if (count(LinearKind::kBlend) == 0) throw ConfigError("method method3 requires blend layers");
      return;
    case Method::kLoraFinetune:
      if (count(LinearKind::kLora) == 0) throw ConfigError("method lora_finetune requires LoRA adapters");
      return;
  }
}

void freeze_for_lora(Model<float>& model) {
  std::set<std::string> adapters;
  for_each_linear(model, [&](std::size_t, MatrixId, LinearLayer<float>& lin) {
    if (lin.kind() == LinearKind::kLora) {
      adapters.insert(lin.name() + ".down");
      adapters.insert(lin.name() + ".up");
    }
  });
  for (const auto& name : model.parameter_names()) {
    if (adapters.count(name) == 0) model.freeze(name);
  }
}

double model_alpha(const Model<float>& model) {
  double alpha = 1.0;
  bool found = false;
  for_each_linear(model, [&](std::size_t, MatrixId, const LinearLayer<float>& lin) {
    if (!found && lin.kind() == LinearKind::kBlend) {
      alpha = static_cast<const BlendLinear<float>&>(lin).alpha();
      found = true;
    }
  });
  return alpha;
}

Gradients<float> batch_gradients(const Model<float>& model, const Batch& batch, const TrainConfig& cfg,
                                 StepResult* stats) {
  cfg.validate();
  if (batch.inputs.empty() || batch.inputs.size() != batch.targets.size()) throw ConfigError("train_step: empty or ragged batch");
  if (cfg.micro_batches > batch.inputs.size()) throw ConfigError("train_step: more micro-batches than windows");

  StepResult r;
  r.alpha = model_alpha(model);
  Gradients<float> total;
  double loss_sum = 0.0;
  const std::size_t windows = batch.inputs.size();
  const std::size_t groups = cfg.micro_batches;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * windows / groups;
    const std::size_t end = (g + 1) * windows / groups;
    Gradients<float> group;
    for (std::size_t w = begin; w < end; ++w) {
      auto fwd = model.forward(batch.inputs[w], cfg.recompute);
      linalg::Grid<float> dlogits;
      loss_sum += transformer::cross_entropy_with_grad(fwd.logits, std::span<const int>(batch.targets[w]), dlogits);
      auto grads = model.backward(fwd.tape, dlogits);
      r.peak_tape_bytes = std::max(r.peak_tape_bytes, fwd.tape.stats.peak_bytes);
      r.recompute_ratio = fwd.tape.stats.recompute_ratio();
      for (auto& [name, grad] : grads) {
        auto it = group.find(name);
        if (it == group.end()) {
          group.emplace(name, std::move(grad));
        } else {
          linalg::add_scaled(it->second, grad);
        }
      }
    }
    const float inv = 1.0f / static_cast<float>(end - begin);
    for (auto& [name, grad] : group) {
      for (auto& v : grad.values()) v *= inv;
      auto it = total.find(name);
      if (it == total.end()) {
        total.emplace(name, std::move(grad));
      } else {
        linalg::add_scaled(it->second, grad);
      }
    }
  }
  const float inv_groups = 1.0f / static_cast<float>(groups);
  for (auto& [name, grad] : total) {
    for (auto& v : grad.values()) v *= inv_groups;
  }
  r.loss = loss_sum / static_cast<double>(windows);
  if (stats) *stats = r;
  return total;
}

StepResult train_step(Model<float>& model, const Batch& batch, const TrainConfig& cfg, AdamWState& state) {
  model.set_step(state.steps());
  StepResult r;
  Gradients<float> total = batch_gradients(model, batch, cfg, &r);
  auto params = model.parameters();
  state.step(params, total, cfg.optim);
  return r;
}

double evaluate(const Model<float>& model, const Batch& batch) {
  double total = 0.0;
  for (std::size_t w = 0; w < batch.inputs.size(); ++w) {
    auto fwd = model.forward(batch.inputs[w], RecomputePolicy::per_layer());
    total += transformer::cross_entropy_loss(fwd.logits, std::span<const int>(batch.targets[w]));
  }
  return batch.inputs.empty() ? 0.0 : total / static_cast<double>(batch.inputs.size());
}

std::string format_record(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%zu", r.step, r.loss, r.lr, r.alpha, r.peak_tape_bytes);
  return buf;
}

TrainResult train(Model<float>& model, std::span<const int> corpus, const TrainConfig& cfg, std::ostream* metrics,
                  AdamWState* state) {
  cfg.validate();
  check_method(model, cfg.method);
  if (cfg.method == Method::kLoraFinetune) freeze_for_lora(model);
  if (cfg.seq > model.config().max_seq) throw ConfigError("train: seq exceeds the model's max_seq");
  AdamWState local;
  AdamWState& st = state != nullptr ? *state : local;
  BatchSampler sampler(std::vector<int>(corpus.begin(), corpus.end()), cfg.batch, cfg.seq, linalg::derive_seed(cfg.seed, 7));
  TrainResult result;
  if (metrics != nullptr) *metrics << kMetricsHeader << '\n';
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Batch b = sampler.next();
    const std::size_t step = st.steps();
    const StepResult r = train_step(model, b, cfg, st);
    StepRecord rec{step, r.loss, cfg.optim.lr, r.alpha, r.peak_tape_bytes};
    if (metrics != nullptr) *metrics << format_record(rec) << '\n';
    result.records.push_back(rec);
    result.recompute_ratio = r.recompute_ratio;
  }
  model.set_step(st.steps());
  return result;
}

transformer::LayerSpecMap lowrank_specs(std::size_t rank, std::span<const MatrixId> targets) {
  check_targets(targets);
  transformer::LayerSpecMap specs;
  for (MatrixId id : targets) {
    LayerSpec s;
    s.kind = LinearKind::kLowRank;
    s.rank = rank;
    specs[id] = s;
  }
  return specs;
}

Model<float> to_blend(const Model<float>& pretrained, std::size_t rank, double start_alpha, std::size_t end_step,
                      std::uint64_t seed, std::span<const MatrixId> targets) {
  check_targets(targets);
  if (!(start_alpha >= 0.0 && start_alpha <= 1.0)) throw ConfigError("blend: start_alpha must lie in [0, 1]");
  Model<float> out = pretrained;
  LayerSpec spec;
  spec.kind = LinearKind::kBlend;
  spec.rank = rank;
  spec.start_alpha = start_alpha;
  spec.end_step = end_step;
  for_each_linear(pretrained, [&](std::size_t l, MatrixId id, const LinearLayer<float>& lin) {
    if (!targeted(targets, id)) return;
    const auto w = lin.effective_weight();
    out.replace(l, id, transformer::make_linear<float>(lin.name(), spec, lin.fan_out(), lin.fan_in(), layer_seed(seed, l, id), &w));
  });
  return out;
}

Model<float> attach_lora(const Model<float>& base, std::size_t rank, int base_bits, std::uint64_t seed,
                         std::span<const MatrixId> targets) {
  check_targets(targets);
  Model<float> out = base;
  LayerSpec spec;
  spec.kind = LinearKind::kLora;
  spec.rank = rank;
  spec.bits = base_bits;
  for_each_linear(base, [&](std::size_t l, MatrixId id, const LinearLayer<float>& lin) {
    if (!targeted(targets, id)) return;
    if (lin.kind() != LinearKind::kDense) throw ConfigError(lin.name() + ": adapters attach to dense layers only");
    const auto w = lin.effective_weight();
    out.replace(l, id, transformer::make_linear<float>(lin.name(), spec, lin.fan_out(), lin.fan_in(), layer_seed(seed, l, id), &w));
  });
  freeze_for_lora(out);
  return out;
}

Model<float> merge_adapters(const Model<float>& model, bool dequantize) {
  Model<float> out = model;
  std::size_t merged = 0;
  for_each_linear(model, [&](std::size_t l, MatrixId id, const LinearLayer<float>& lin) {
    if (lin.kind() != LinearKind::kLora) return;
    auto adapter = static_cast<const LoraLinear<float>&>(lin).adapter();
    if (adapter.quantized_base()) {
      if (!dequantize) throw ConfigError(lin.name() + ": base is quantized; dequantize it before merging");
      lowrank::dequantize_base(adapter);
    }
    out.replace(l, id, std::make_unique<DenseLinear<float>>(lin.name(), lowrank::lora_merge(adapter)));
    ++merged;
  });
  if (merged == 0) throw ConfigError("merge: model has no adapters");
  const auto frozen = out.frozen();
  for (const auto& name : frozen) out.unfreeze(name);
  return out;
}

Model<float> quantize_model(const Model<float>& model, int bits, std::span<const MatrixId> targets) {
  check_targets(targets);
  Model<float> out = model;
  for_each_linear(model, [&](std::size_t l, MatrixId id, const LinearLayer<float>& lin) {
    if (!targeted(targets, id)) return;
    if (lin.kind() != LinearKind::kDense) throw ConfigError(lin.name() + ": only dense layers can be quantized");
    const auto& w = static_cast<const DenseLinear<float>&>(lin).weight();
    out.replace(l, id, std::make_unique<transformer::QuantLinear<float>>(lin.name(), quant::quantize_rows(w, bits)));
  });
  return out;
}

}  // namespace lrlm::trainer
