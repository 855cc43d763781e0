// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/transformer/config.hpp"

#include <algorithm>
#include <string>

#include "lrlm/common/error.hpp"

namespace lrlm::transformer {

void ModelConfig::validate(bool allow_empty_stack) const {
  const auto need = [&](bool ok, const char* what) {
    if (!ok) throw ConfigError("model config '" + name + "': " + what);
  };
  need(vocab >= 1, "vocab must be >= 1");
  need(dim >= 1, "dim must be >= 1");
  need(heads >= 1, "heads must be >= 1");
  need(dim % heads == 0, "dim must be divisible by heads");
  need(allow_empty_stack || layers >= 1, "layers must be >= 1");
  need(ffn_dim >= 1, "ffn_dim must be >= 1");
  need(max_seq >= 1, "max_seq must be >= 1");
  need(rope_base > 0.0, "rope_base must be positive");
}

std::string_view matrix_name(MatrixId id) {
  switch (id) {
    case MatrixId::kQ: return "wq";
    case MatrixId::kK: return "wk";
    case MatrixId::kV: return "wv";
    case MatrixId::kO: return "wo";
    case MatrixId::kU: return "wu";
    case MatrixId::kG: return "wg";
    case MatrixId::kD: return "wd";
    case MatrixId::kE: return "we";
    case MatrixId::kH: return "wh";
  }
  return "?";
}

std::string_view matrix_symbol(MatrixId id) {
  switch (id) {
    case MatrixId::kQ: return "W^Q";
    case MatrixId::kK: return "W^K";
    case MatrixId::kV: return "W^V";
    case MatrixId::kO: return "W^O";
    case MatrixId::kU: return "W^U";
    case MatrixId::kG: return "W^G";
    case MatrixId::kD: return "W^D";
    case MatrixId::kE: return "W^E";
    case MatrixId::kH: return "W^H";
  }
  return "?";
}

std::optional<MatrixId> parse_matrix(std::string_view name) {
  for (MatrixId id : kAllMatrices) {
    if (name == matrix_name(id)) return id;
  }
  if (name.size() == 1) {
    static constexpr std::string_view letters = "qkvougdeh";
    if (auto pos = letters.find(name[0]); pos != std::string_view::npos) return kAllMatrices[pos];
  }
  return std::nullopt;
}

std::pair<std::size_t, std::size_t> matrix_shape(const ModelConfig& cfg, MatrixId id) {
  switch (id) {
    case MatrixId::kQ:
    case MatrixId::kK:
    case MatrixId::kV:
    case MatrixId::kO: return {cfg.dim, cfg.dim};
    case MatrixId::kU:
    case MatrixId::kG: return {cfg.ffn_dim, cfg.dim};
    case MatrixId::kD: return {cfg.dim, cfg.ffn_dim};
    // The embedding maps a one-hot token (length vocab) to dim.
    case MatrixId::kE: return {cfg.dim, cfg.vocab};
    case MatrixId::kH: return {cfg.vocab, cfg.dim};
  }
  return {0, 0};
}

std::string_view kind_name(LinearKind kind) {
  switch (kind) {
    case LinearKind::kDense: return "dense";
    case LinearKind::kLowRank: return "lowrank";
    case LinearKind::kLora: return "lora";
    case LinearKind::kQuantized: return "quantized";
    case LinearKind::kBlend: return "blend";
  }
  return "?";
}

std::optional<LinearKind> parse_kind(std::string_view name) {
  for (auto k : {LinearKind::kDense, LinearKind::kLowRank, LinearKind::kLora, LinearKind::kQuantized,
                 LinearKind::kBlend}) {
    if (name == kind_name(k)) return k;
  }
  return std::nullopt;
}

void LayerSpec::validate(std::size_t fan_out, std::size_t fan_in, std::string_view what) const {
  const auto fail = [&](const std::string& msg) { throw ConfigError(std::string(what) + ": " + msg); };
  switch (kind) {
    case LinearKind::kDense: break;
    case LinearKind::kQuantized:
      if (bits != 4 && bits != 8) fail("quantized layers need bits 4 or 8");
      break;
    case LinearKind::kLora:
      if (bits != 0 && bits != 4 && bits != 8) fail("lora base bits must be 0, 4 or 8");
      [[fallthrough]];
    case LinearKind::kLowRank:
    case LinearKind::kBlend:
      if (rank < 1 || rank >= std::min(fan_in, fan_out)) {
        fail("rank " + std::to_string(rank) + " must satisfy 1 <= r < min(" + std::to_string(fan_in) + ", " +
             std::to_string(fan_out) + ")");
      }
      if (kind == LinearKind::kBlend && (start_alpha < 0.0 || start_alpha > 1.0)) fail("start_alpha must be in [0, 1]");
      break;
  }
}

LayerSpec spec_for(const LayerSpecMap& specs, MatrixId id) {
  const auto it = specs.find(id);
  return it == specs.end() ? LayerSpec{} : it->second;
}

std::optional<ModelConfig> preset(std::string_view name) {
  ModelConfig c;
  c.name = std::string(name);
  if (name == "llama2-7b") {
    c.vocab = 32000, c.dim = 4096, c.heads = 32, c.layers = 32, c.ffn_dim = 11008, c.max_seq = 4096;
    c.nominal_params = 7e9;
  } else if (name == "llama2-13b") {
    c.vocab = 32000, c.dim = 5120, c.heads = 40, c.layers = 40, c.ffn_dim = 13824, c.max_seq = 4096;
    c.nominal_params = 13e9;
  } else if (name == "llama2-70b") {
    // Multi-head layout; the released model uses grouped-query attention.
    c.vocab = 32000, c.dim = 8192, c.heads = 64, c.layers = 80, c.ffn_dim = 28672, c.max_seq = 4096;
    c.nominal_params = 70e9;
  } else if (name == "gpt2-127m") {
    c.vocab = 50257, c.dim = 768, c.heads = 12, c.layers = 12, c.ffn_dim = 3072, c.max_seq = 1024;
    c.family = Family::kGpt2;
  } else if (name == "gpt2-1.5b") {
    c.vocab = 50257, c.dim = 1600, c.heads = 25, c.layers = 48, c.ffn_dim = 6400, c.max_seq = 1024;
    c.family = Family::kGpt2;
  } else if (name == "toy") {
    c.vocab = 259, c.dim = 128, c.heads = 4, c.layers = 4, c.ffn_dim = 256, c.max_seq = 128;
  } else {
    return std::nullopt;
  }
  return c;
}

}  // namespace lrlm::transformer
