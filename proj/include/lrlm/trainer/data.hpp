// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrlm/linalg/random.hpp"

namespace lrlm::trainer {

/// Byte vocabulary: ids 0..255 are bytes; specials follow.
inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;
inline constexpr int kPadToken = 258;
inline constexpr std::size_t kByteVocab = 259;

std::vector<int> byte_tokenize(std::string_view corpus);

/// Inverse of byte_tokenize; special tokens are dropped.
std::string detokenize(std::span<const int> tokens);

/// Entropy (nats) of the token frequency distribution.
double unigram_entropy(std::span<const int> tokens);

struct Batch {
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> targets;  // inputs shifted by one
  std::vector<std::size_t> offsets;
};

/// Reproducible contiguous windows drawn uniformly from every valid offset.
class BatchSampler {
 public:
  /// Throws ConfigError unless tokens.size() > seq, and for batch or seq of 0.
  BatchSampler(std::vector<int> tokens, std::size_t batch, std::size_t seq, std::uint64_t seed);

  Batch next();
  std::size_t offset_count() const noexcept { return tokens_.size() - seq_; }

 private:
  std::vector<int> tokens_;
  std::size_t batch_;
  std::size_t seq_;
  linalg::SplitMix64 rng_;
};

/// Text with a short repeating pattern, used for smoke training.
std::string repetitive_corpus(std::size_t bytes);

}  // namespace lrlm::trainer
