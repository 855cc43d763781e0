// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/distsim/distsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "lrlm/common/error.hpp"
#include "lrlm/common/parallel.hpp"
#include "lrlm/linalg/ops.hpp"

namespace lrlm::distsim {

using trainer::Model;
using transformer::Gradients;
using transformer::MatrixId;

// ---------------------------------------------------------------- pipeline

double pipeline_utilization(std::size_t stages, std::size_t micro_batches) {
  if (stages == 0 || micro_batches == 0) return 0.0;
  return static_cast<double>(micro_batches) / static_cast<double>(stages + micro_batches - 1);
}

PipelinePlan pipeline_schedule(std::size_t stages, std::size_t micro_batches, double f, double b) {
  if (stages == 0 || micro_batches == 0) throw ConfigError("pipeline: stages and micro_batches must be >= 1");
  if (!(f > 0.0)) throw ConfigError("pipeline: forward cost must be > 0");
  if (b <= 0.0) b = 2.0 * f;
  const std::size_t N = stages, M = micro_batches;
  PipelinePlan p;
  p.stages = N;
  p.micro_batches = M;
  p.forward_cost = f;
  p.backward_cost = b;

  std::vector<double> free(N, 0.0);
  std::vector<double> prev(M, 0.0);  // finish time of each micro-batch on the previous stage
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      const double start = std::max(free[i], prev[j]);
      p.events.push_back({i, j, Phase::kForward, start, start + f});
      free[i] = prev[j] = start + f;
    }
  }
  // Backward: reverse micro-batch order, last stage first.
  std::vector<double> next(M, 0.0);
  for (std::size_t i = N; i-- > 0;) {
    for (std::size_t k = 0; k < M; ++k) {
      const std::size_t j = M - 1 - k;
      const double start = std::max(free[i], next[j]);
      p.events.push_back({i, j, Phase::kBackward, start, start + b});
      free[i] = next[j] = start + b;
    }
  }
  for (const auto& e : p.events) {
    p.makespan = std::max(p.makespan, e.end);
    p.busy += e.end - e.start;
  }
  p.utilization = p.busy / (static_cast<double>(N) * p.makespan);
  return p;
}

std::string PipelinePlan::gantt(double unit) const {
  if (unit <= 0.0) unit = std::min(forward_cost, backward_cost);
  const auto cells = static_cast<std::size_t>(std::ceil(makespan / unit - 1e-9));
  std::size_t width = 2;
  for (std::size_t m = micro_batches; m >= 10; m /= 10) ++width;
  std::ostringstream os;
  for (std::size_t s = 0; s < stages; ++s) {
    os << "stage " << s << " |";
    for (std::size_t c = 0; c < cells; ++c) {
      const double mid = (static_cast<double>(c) + 0.5) * unit;
      std::string cell(width, '.');
      for (const auto& e : events) {
        if (e.stage == s && e.start <= mid && mid < e.end) {
          cell = (e.phase == Phase::kForward ? "F" : "B") + std::to_string(e.micro_batch);
          cell.resize(width, ' ');
          break;
        }
      }
      os << cell << '|';
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- sharding

namespace {

std::vector<std::uint64_t> split_bytes(std::uint64_t total, std::size_t parts) {
  std::vector<std::uint64_t> out(parts, total / parts);
  for (std::size_t i = 0; i < total % parts; ++i) ++out[i];
  return out;
}

}  // namespace

ShardPlan shard_plan(double model_bytes, double trainable_params, std::size_t gpus) {
  if (gpus == 0) throw ConfigError("shard: gpu count must be >= 1");
  if (model_bytes < 0.0 || trainable_params < 0.0) throw ConfigError("shard: sizes must be >= 0");
  ShardPlan p;
  p.gpus = gpus;
  p.params_bytes = model_bytes;
  p.grads_bytes = 2.0 * trainable_params;
  p.optimizer_bytes = 12.0 * trainable_params;
  p.grad_shards = split_bytes(static_cast<std::uint64_t>(std::llround(p.grads_bytes)), gpus);
  p.optimizer_shards = split_bytes(static_cast<std::uint64_t>(std::llround(p.optimizer_bytes)), gpus);
  const double G = static_cast<double>(gpus);
  p.per_gpu_bytes = p.params_bytes + (p.grads_bytes + p.optimizer_bytes) / G;
  p.scatter_bytes = p.grads_bytes * (G - 1.0) / G;
  p.gather_bytes = p.params_bytes * (G - 1.0) / G;
  return p;
}

// ---------------------------------------------------------------- offload

OffloadReport offload_peak(const PhaseFootprint& c) {
  if (c.params < 0 || c.grads < 0 || c.optimizer < 0 || c.intermediates < 0) {
    throw ConfigError("offload: footprints must be >= 0");
  }
  OffloadReport r;
  r.forward = c.params + c.intermediates;
  r.backward = c.params + c.grads + c.intermediates;
  r.update = c.params + c.grads + c.optimizer;
  r.peak = std::max({r.forward, r.backward, r.update});
  r.naive = c.params + c.grads + c.optimizer + c.intermediates;
  return r;
}

// ---------------------------------------------------------------- federated

FederatedReport federated_comm_report(const FederatedConfig& cfg) {
  if (cfg.nodes < 2) throw ConfigError("federated: need at least 2 nodes");
  if (cfg.payload_bytes < 0.0) throw ConfigError("federated: payload must be >= 0");
  if (!(cfg.net_MBps > 0.0)) throw ConfigError("federated: net rate must be > 0");
  FederatedReport r;
  r.center_per_iter = 2.0 * static_cast<double>(cfg.nodes - 1) * cfg.payload_bytes;
  r.worker_per_iter = 2.0 * cfg.payload_bytes;
  const double it = static_cast<double>(cfg.iterations);
  r.center_total = r.center_per_iter * it;
  r.worker_total = r.worker_per_iter * it;
  r.center_seconds = r.center_total / (cfg.net_MBps * 1e6);
  r.worker_seconds = r.worker_total / (cfg.net_MBps * 1e6);
  return r;
}

std::string_view fed_mode_name(FedMode m) { return m == FedMode::kFull ? "full" : "lora"; }

std::vector<std::string> transmitted_tensors(Model<float>& model, FedMode mode) {
  std::vector<std::string> out;
  auto params = model.parameters();
  if (mode == FedMode::kFull) {
    for (const auto& p : params) out.push_back(p.name);
    return out;
  }
  std::set<std::string> adapters;
  auto collect = [&](transformer::LinearLayer<float>& lin) {
    if (lin.kind() != transformer::LinearKind::kLora) return;
    std::vector<transformer::ParamRef<float>> ps;
    lin.parameters(ps);
    for (const auto& p : ps) {
      if (p.trainable) adapters.insert(p.name);
    }
  };
  for (std::size_t l = 0; l < model.config().layers; ++l) {
    for (MatrixId id : transformer::kBlockMatrices) collect(model.linear(l, id));
  }
  collect(model.linear(0, MatrixId::kH));
  for (const auto& p : params) {
    const bool adapter = adapters.count(p.name) > 0;
    if (p.trainable && !adapter) throw ConfigError("federated lora mode: non-adapter tensor '" + p.name + "' is trainable");
    if (adapter && p.trainable) out.push_back(p.name);
  }
  if (out.empty()) throw ConfigError("federated lora mode: model has no trainable adapters");
  return out;
}

namespace {

void check_replica(Model<float>& center, Model<float>& worker, std::size_t index) {
  auto a = center.parameters();
  auto b = worker.parameters();
  if (a.size() != b.size()) throw ConfigError("federated: worker " + std::to_string(index) + " has a different layout");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = *a[i].value;
    const auto& y = *b[i].value;
    if (a[i].name != b[i].name || x.rows() != y.rows() || x.cols() != y.cols() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) {
      throw ConfigError("federated: worker " + std::to_string(index) + " diverged from the center at '" + a[i].name + "'");
    }
  }
}

void copy_tensors(Model<float>& from, Model<float>& to, const std::set<std::string>& names) {
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (names.count(src[i].name)) *dst[i].value = *src[i].value;
  }
}

}  // namespace

FederatedRoundResult federated_round(Model<float>& center, trainer::AdamWState& state, std::vector<Model<float>>& workers,
                                     std::span<const trainer::Batch> batches, FedMode mode,
                                     const trainer::TrainConfig& cfg) {
  if (workers.empty()) throw ConfigError("federated: need at least one worker");
  if (batches.size() != workers.size()) throw ConfigError("federated: one batch per worker required");
  for (std::size_t w = 0; w < workers.size(); ++w) check_replica(center, workers[w], w);

  const auto names = transmitted_tensors(center, mode);
  const std::set<std::string> wire(names.begin(), names.end());
  std::map<std::string, std::uint64_t> sizes;
  for (const auto& p : center.parameters()) sizes[p.name] = p.value->size() * sizeof(float);

  FederatedRoundResult r;
  for (const auto& n : names) r.payload_bytes += sizes[n];

  // Broadcast.
  for (std::size_t w = 0; w < workers.size(); ++w) {
    copy_tensors(center, workers[w], wire);
    for (const auto& n : names) r.log.push_back({w, true, n, sizes[n]});
  }

  // Local gradients.
  std::vector<Gradients<float>> grads(workers.size());
  std::vector<trainer::StepResult> stats(workers.size());
  for (auto& w : workers) w.set_step(state.steps());
  parallel_for(workers.size(), max_threads(), [&](std::size_t w) {
    grads[w] = trainer::batch_gradients(workers[w], batches[w], cfg, &stats[w]);
  });

  // Gather and average in worker order.
  Gradients<float> avg;
  for (std::size_t w = 0; w < workers.size(); ++w) {
    for (auto& [name, g] : grads[w]) {
      if (!wire.count(name)) throw ConfigError("federated: gradient for untransmitted tensor '" + name + "'");
      r.log.push_back({w, false, name, g.size() * sizeof(float)});
      auto it = avg.find(name);
      if (it == avg.end()) {
        avg.emplace(name, std::move(g));
      } else {
        linalg::add_scaled(it->second, g);
      }
    }
    r.loss += stats[w].loss;
  }
  const float inv = 1.0f / static_cast<float>(workers.size());
  for (auto& [name, g] : avg) {
    for (auto& v : g.values()) v *= inv;
  }
  r.loss /= static_cast<double>(workers.size());

  center.set_step(state.steps());
  auto params = center.parameters();
  state.step(params, avg, cfg.optim);

  for (auto& w : workers) copy_tensors(center, w, wire);

  for (const auto& t : r.log) {
    r.center_bytes += t.bytes;
    if (t.worker == 0) r.worker_bytes += t.bytes;
  }
  return r;
}

}  // namespace lrlm::distsim
