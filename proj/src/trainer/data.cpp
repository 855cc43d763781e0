// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/trainer/data.hpp"

#include <array>
#include <cmath>
#include <map>

#include "lrlm/common/error.hpp"

namespace lrlm::trainer {

std::vector<int> byte_tokenize(std::string_view corpus) {
  std::vector<int> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out[i] = static_cast<unsigned char>(corpus[i]);
  return out;
}

std::string detokenize(std::span<const int> tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) {
    if (t >= 0 && t < 256) s.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return s;
}

double unigram_entropy(std::span<const int> tokens) {
  if (tokens.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int t : tokens) ++counts[t];
  double h = 0.0;
  const double total = static_cast<double>(tokens.size());
  for (const auto& [tok, c] : counts) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

BatchSampler::BatchSampler(std::vector<int> tokens, std::size_t batch, std::size_t seq, std::uint64_t seed)
    : tokens_(std::move(tokens)), batch_(batch), seq_(seq), rng_(seed) {
  if (batch_ == 0 || seq_ == 0) throw ConfigError("sampler: batch and seq must be positive");
  if (tokens_.size() <= seq_) {
    throw ConfigError("sampler: corpus of " + std::to_string(tokens_.size()) + " tokens is not longer than seq " +
                      std::to_string(seq_));
  }
}

Batch BatchSampler::next() {
  Batch b;
  for (std::size_t i = 0; i < batch_; ++i) {
    const std::size_t off = rng_.below(offset_count());
    b.offsets.push_back(off);
    b.inputs.emplace_back(tokens_.begin() + static_cast<std::ptrdiff_t>(off),
                          tokens_.begin() + static_cast<std::ptrdiff_t>(off + seq_));
    b.targets.emplace_back(tokens_.begin() + static_cast<std::ptrdiff_t>(off + 1),
                           tokens_.begin() + static_cast<std::ptrdiff_t>(off + seq_ + 1));
  }
  return b;
}

std::string repetitive_corpus(std::size_t bytes) {
  static constexpr std::array<std::string_view, 4> kLines{
      "the quick brown fox jumps over the lazy dog. ",
      "a small model learns the pattern of this text. ",
      "low rank layers keep the weights small. ",
      "every step the loss goes down a little. ",
  };
  std::string s;
  s.reserve(bytes);
  for (std::size_t i = 0; s.size() < bytes; ++i) s += kLines[i % kLines.size()];
  s.resize(bytes);
  return s;
}

}  // namespace lrlm::trainer
