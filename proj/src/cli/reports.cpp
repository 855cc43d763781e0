// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/cli/reports.hpp"

#include <cstdio>
#include <sstream>

namespace lrlm::cli {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

constexpr double kGB = 1e9;

}  // namespace

Json to_json(const costmodel::ParamReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"module", row.module},
                    {"shape", {row.rows, row.cols}},
                    {"kind", std::string(transformer::kind_name(row.kind))},
                    {"rank", row.rank},
                    {"per_instance", row.per_instance},
                    {"instances", row.instances},
                    {"total", row.total},
                    {"amount_M", row.total / 1e6},
                    {"storage_GB", row.total * 2.0 / kGB},
                    {"percent", r.total ? 100.0 * static_cast<double>(row.total) / static_cast<double>(r.total) : 0.0}});
  }
  return {{"rows", rows},
          {"norm_params", r.norm_params},
          {"other_params", r.other_params},
          {"total", r.total},
          {"trainable", r.trainable}};
}

Json to_json(const costmodel::MemoryReport& r) {
  Json vars = Json::array();
  for (const auto& v : r.variables) {
    vars.push_back({{"name", v.name}, {"elements", v.elements}, {"GB", v.bytes / kGB}, {"per_layer", v.per_layer},
                    {"kept", v.kept}});
  }
  return {{"param_count", r.param_count},
          {"trainable_count", r.trainable_count},
          {"params_GB", r.params_bytes / kGB},
          {"grads_GB", r.grads_bytes / kGB},
          {"optimizer_GB", r.optimizer_bytes / kGB},
          {"intermediates_GB", r.intermediates_bytes / kGB},
          {"store_all_intermediates_GB", r.store_all_bytes / kGB},
          {"total_GB", r.total_bytes / kGB},
          {"recompute_flop_ratio", r.recompute_ratio},
          {"bytes_per_param", r.bytes_per_param},
          {"grad_bytes_per_param", r.grad_bytes_per_param},
          {"optimizer_bytes_per_param", r.optimizer_bytes_per_param},
          {"activation_bytes_per_element", 2},
          {"variables", vars}};
}

Json to_json(const costmodel::WorkloadReport& r) {
  Json secs = Json::object();
  for (const auto& [p, s] : r.seconds) secs[std::string(costmodel::precision_name(p))] = s;
  return {{"param_count", r.param_count}, {"flops_per_token", r.flops_per_token}, {"token_passes", r.token_passes},
          {"total_flops", r.total_flops},  {"kv_cache", r.kv_cache},              {"est_seconds", secs}};
}

Json to_json(const distsim::PipelinePlan& p) {
  Json events = Json::array();
  for (const auto& e : p.events) {
    events.push_back({{"stage", e.stage},
                      {"micro_batch", e.micro_batch},
                      {"phase", e.phase == distsim::Phase::kForward ? "F" : "B"},
                      {"start", e.start},
                      {"end", e.end}});
  }
  return {{"stages", p.stages},
          {"micro_batches", p.micro_batches},
          {"forward_cost", p.forward_cost},
          {"backward_cost", p.backward_cost},
          {"makespan", p.makespan},
          {"utilization", p.utilization},
          {"formula", distsim::pipeline_utilization(p.stages, p.micro_batches)},
          {"events", events}};
}

Json to_json(const distsim::ShardPlan& p) {
  return {{"gpus", p.gpus},
          {"params_GB", p.params_bytes / kGB},
          {"grads_GB", p.grads_bytes / kGB},
          {"optimizer_GB", p.optimizer_bytes / kGB},
          {"per_gpu_GB", p.per_gpu_bytes / kGB},
          {"unsharded_GB", (p.params_bytes + p.grads_bytes + p.optimizer_bytes) / kGB},
          {"grad_shard_bytes", p.grad_shards},
          {"optimizer_shard_bytes", p.optimizer_shards},
          {"reduce_scatter_GB", p.scatter_bytes / kGB},
          {"all_gather_GB", p.gather_bytes / kGB}};
}

Json to_json(const distsim::OffloadReport& r) {
  return {{"forward_GB", r.forward / kGB}, {"backward_GB", r.backward / kGB}, {"update_GB", r.update / kGB},
          {"peak_GB", r.peak / kGB},       {"naive_GB", r.naive / kGB}};
}

Json to_json(const distsim::FederatedReport& r) {
  return {{"center_per_iter_bytes", r.center_per_iter}, {"worker_per_iter_bytes", r.worker_per_iter},
          {"center_total_bytes", r.center_total},       {"worker_total_bytes", r.worker_total},
          {"center_seconds", r.center_seconds},         {"worker_seconds", r.worker_seconds}};
}

std::string params_table(const costmodel::ParamReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %-16s %12s %13s %15s\n", "Module", "Size", "Amount (M)", "Storage (GB)",
                "Percentage (%)");
  os << line;
  for (const auto& row : r.rows) {
    std::string size = row.cols == 1 ? std::to_string(row.rows) : std::to_string(row.rows) + " x " + std::to_string(row.cols);
    if (row.kind != transformer::LinearKind::kDense && row.rank) size += " r" + std::to_string(row.rank);
    const double pct = r.total ? 100.0 * static_cast<double>(row.total) / static_cast<double>(r.total) : 0.0;
    std::snprintf(line, sizeof line, "%-10s %-16s %12.2f %13.2f %15.2f\n", row.module.c_str(), size.c_str(),
                  row.total / 1e6, row.total * 2.0 / kGB, pct);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-10s %-16s %12.2f %13.2f %15.2f\n", "Total", "", r.total / 1e6, r.total * 2.0 / kGB,
                100.0);
  os << line;
  os << "exact total " << r.total << " (norms " << r.norm_params << ", other " << r.other_params << "), trainable "
     << r.trainable << "\n";
  return os.str();
}

std::string memory_table(const costmodel::MemoryReport& r) {
  std::ostringstream os;
  os << "params        " << fmt("%10.2f GB", r.params_bytes / kGB) << "\n";
  os << "gradients     " << fmt("%10.2f GB", r.grads_bytes / kGB) << "\n";
  os << "optimizer     " << fmt("%10.2f GB", r.optimizer_bytes / kGB) << "\n";
  os << "intermediates " << fmt("%10.2f GB", r.intermediates_bytes / kGB) << "\n";
  os << "total         " << fmt("%10.2f GB", r.total_bytes / kGB) << "\n";
  os << "recompute     " << fmt("%10.2f %% extra FLOPs", 100.0 * r.recompute_ratio) << "\n";
  os << "variable   elements (M)   size (GB)  kept\n";
  for (const auto& v : r.variables) {
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %14.1f %11.2f  %s\n", v.name.c_str(), v.elements / 1e6, v.bytes / kGB,
                  v.kept ? "yes" : "no");
    os << line;
  }
  return os.str();
}

}  // namespace lrlm::cli
