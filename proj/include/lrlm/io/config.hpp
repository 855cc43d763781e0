// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Strict JSON experiment configuration. Unknown keys are rejected with the
// full key path.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrlm/costmodel/costmodel.hpp"
#include "lrlm/distsim/distsim.hpp"
#include "lrlm/trainer/trainer.hpp"
#include "lrlm/transformer/config.hpp"

namespace lrlm::io {

using Json = nlohmann::ordered_json;

struct DataSection {
  std::string corpus;        // path to a text file; empty selects the built-in corpus
  std::size_t bytes = 65536;  // size of the built-in corpus
};

struct AdapterSection {
  std::size_t rank = 8;
  int base_bits = 0;
  std::vector<transformer::MatrixId> targets{transformer::MatrixId::kQ, transformer::MatrixId::kV};
};

struct BlendSection {
  std::size_t rank = 32;
  double start_alpha = 1.0;
  std::size_t end_step = 100;
};

struct PipelineSection {
  std::size_t stages = 4;
  std::size_t micro_batches = 8;
  double forward_cost = 1.0;
  double backward_cost = 2.0;
};

struct ShardSection {
  std::size_t gpus = 8;
};

struct FederatedSection {
  std::size_t nodes = 4;
  std::uint64_t iterations = 1;
  double net_MBps = 125.0;
  distsim::FedMode mode = distsim::FedMode::kFull;
};

struct ExperimentConfig {
  transformer::ModelConfig model;
  transformer::LayerSpecMap layers;
  trainer::TrainConfig train;
  costmodel::HardwareProfile hardware;
  DataSection data;
  AdapterSection lora;
  BlendSection blend;
  PipelineSection pipeline;
  ShardSection shard;
  FederatedSection federated;
};

/// The toy preset with default sections.
ExperimentConfig default_experiment();

/// Parses a config document. The model section takes either {"preset": name}
/// optionally followed by field overrides, or every field explicitly.
/// Throws ConfigError on unknown keys, wrong types, missing referenced files
/// or invalid values.
ExperimentConfig parse_experiment(const Json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

Json to_json(const ExperimentConfig& cfg);
Json to_json(const transformer::ModelConfig& cfg);
Json to_json(const transformer::LayerSpecMap& specs);
Json to_json(const transformer::RecomputePolicy& policy);

transformer::ModelConfig model_from_json(const Json& j, const std::string& path = "model");
transformer::LayerSpecMap specs_from_json(const Json& j, const std::string& path = "layers");

/// Parses a JSON file, converting parse failures to ConfigError.
Json read_json_file(const std::filesystem::path& path);

}  // namespace lrlm::io
