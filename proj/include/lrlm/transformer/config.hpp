// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace lrlm::transformer {

/// llama: RMSNorm, rotary positions, gated SiLU FFN, untied head, no biases.
/// gpt2: LayerNorm with bias, learned positions, two-matrix GELU FFN, biases,
/// head tied to the embedding. gpt2 is used for parameter accounting only.
enum class Family { kLlama, kGpt2 };

struct ModelConfig {
  std::string name;
  std::size_t vocab = 0;    // t
  std::size_t dim = 0;      // n
  std::size_t heads = 0;    // h
  std::size_t layers = 0;   // N
  std::size_t ffn_dim = 0;  // m
  std::size_t max_seq = 0;  // l
  double rope_base = 10000.0;
  Family family = Family::kLlama;
  /// Rounded headline size ("7 B"), 0 when none. Used by table reproduction.
  double nominal_params = 0.0;

  std::size_t head_dim() const noexcept { return heads == 0 ? 0 : dim / heads; }

  /// Throws ConfigError when the shape is inconsistent. `allow_empty_stack`
  /// admits layers == 0 for accounting.
  void validate(bool allow_empty_stack = false) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class MatrixId : std::uint8_t { kQ, kK, kV, kO, kU, kG, kD, kE, kH };

inline constexpr std::array<MatrixId, 9> kAllMatrices{MatrixId::kQ, MatrixId::kK, MatrixId::kV,
                                                      MatrixId::kO, MatrixId::kU, MatrixId::kG,
                                                      MatrixId::kD, MatrixId::kE, MatrixId::kH};
inline constexpr std::array<MatrixId, 7> kBlockMatrices{MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO,
                                                        MatrixId::kU, MatrixId::kG, MatrixId::kD};

/// Short name used in tensor names and configs: "wq", "wk", ..., "we", "wh".
std::string_view matrix_name(MatrixId id);
/// Display symbol: "W^Q", ...
std::string_view matrix_symbol(MatrixId id);
std::optional<MatrixId> parse_matrix(std::string_view name);

/// (fan_out, fan_in) of a matrix in the given config.
std::pair<std::size_t, std::size_t> matrix_shape(const ModelConfig& cfg, MatrixId id);

enum class LinearKind : std::uint8_t { kDense, kLowRank, kLora, kQuantized, kBlend };

std::string_view kind_name(LinearKind kind);
std::optional<LinearKind> parse_kind(std::string_view name);

/// Implementation of one named matrix, applied across all decoder layers.
struct LayerSpec {
  LinearKind kind = LinearKind::kDense;
  std::size_t rank = 0;      // lowrank / lora / blend
  int bits = 0;              // quantized; for lora, a non-zero value quantizes the frozen base
  double start_alpha = 1.0;  // blend
  std::size_t end_step = 0;  // blend

  /// Throws ConfigError unless the spec is admissible for a fan_out x fan_in matrix.
  void validate(std::size_t fan_out, std::size_t fan_in, std::string_view what) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Missing entries mean dense.
using LayerSpecMap = std::map<MatrixId, LayerSpec>;

LayerSpec spec_for(const LayerSpecMap& specs, MatrixId id);

/// Shapes of the published model families (no weights).
/// Known names: llama2-7b, llama2-13b, llama2-70b, gpt2-127m, gpt2-1.5b, toy.
std::optional<ModelConfig> preset(std::string_view name);

}  // namespace lrlm::transformer
