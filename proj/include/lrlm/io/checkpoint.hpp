// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   "LRLM"  u32 version  u64 header_len  header (UTF-8 JSON)  zero padding
//   payload: one block per tensor, each starting on a 64-byte boundary
//
// The header holds model_config, layer_specs, the frozen set, the training
// step and a tensor table {name: {dtype, shape, offset, length}}, offsets
// relative to the payload start. Quantized tensors (u8q, u4q) are row-packed
// codes with f32 companions "<name>.scale" and "<name>.offset".

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lrlm/transformer/model.hpp"

namespace lrlm::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlign = 64;

enum class StoreDtype { kF32, kF16 };

struct TensorEntry {
  std::string dtype;  // f32, f16, u8q, u4q
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::map<std::string, TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;
  std::uint64_t file_bytes = 0;
};

struct SaveOptions {
  /// f16 rounds every dense tensor to half precision (nearest-even).
  StoreDtype dtype = StoreDtype::kF32;
  std::size_t step = 0;
};

/// Writes the model and returns the layout written.
CheckpointInfo save_checkpoint(const std::filesystem::path& path, const transformer::Model<float>& model,
                               const SaveOptions& opts = {});

struct LoadedCheckpoint {
  transformer::Model<float> model;
  CheckpointInfo info;
  std::size_t step = 0;
};

/// Reads and validates a checkpoint. Throws FormatError for a bad magic,
/// unsupported version, corrupt header, overlapping or out-of-range tensors
/// and truncation; no model is returned in those cases.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Reads only the header.
CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

/// IEEE binary16 conversion, round to nearest even.
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

}  // namespace lrlm::io
