// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Llama-style decoder-only transformer with pluggable linear layers,
// hand-written reverse mode and a KV cache for one-token decoding.
//
// Layer l computes
//   x~e = RMSNorm(xe);  q, k = RoPE(Wq x~e), RoPE(Wk x~e);  v = Wv x~e
//   heads = softmax(q k^T / sqrt(d) + mask) v   (per head)
//   xo = Wo heads;  x~o = RMSNorm(xe + xo)
//   xd = Wd (Wu x~o ⊙ SiLU(Wg x~o));  next input = xe + xo + xd

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrlm/linalg/grid.hpp"
#include "lrlm/transformer/config.hpp"
#include "lrlm/transformer/linear.hpp"

namespace lrlm::transformer {

/// Per-layer intermediates that a forward pass may keep for backward.
enum class TapeVar : std::uint8_t {
  kInput,           // xe: layer input
  kNormedInput,     // x~e
  kQuery,           // q (after RoPE)
  kKey,             // k (after RoPE)
  kValue,           // v
  kScores,          // q k^T / sqrt(d), h x l x l
  kProbs,           // s = softmax(scores), h x l x l
  kHeads,           // concatenated head outputs
  kAttnOut,         // xo
  kNormedAttnOut,   // x~o
  kUp,              // xu
  kGate,            // xg
  kDown,            // xd
};

inline constexpr std::size_t kTapeVarCount = 13;

std::string_view tape_var_name(TapeVar v);
std::optional<TapeVar> parse_tape_var(std::string_view name);

struct RecomputePolicy {
  enum class Variant { kStoreAll, kPerLayer, kSelective };

  Variant variant = Variant::kStoreAll;
  std::set<TapeVar> drop;  // Selective only

  static RecomputePolicy store_all() { return {}; }
  static RecomputePolicy per_layer() { return {Variant::kPerLayer, {}}; }
  /// Throws ConfigError if `drop` contains the layer input.
  static RecomputePolicy selective(std::set<TapeVar> drop);

  bool keeps(TapeVar v) const;
  std::string describe() const;

  friend bool operator==(const RecomputePolicy&, const RecomputePolicy&) = default;
};

/// Parses "store_all", "per_layer" or "selective:qk,s".
RecomputePolicy parse_policy(std::string_view text);

template <typename T>
struct LayerTape {
  std::array<std::optional<Grid<T>>, kTapeVarCount> vars;

  bool has(TapeVar v) const { return vars[static_cast<std::size_t>(v)].has_value(); }
  const Grid<T>& get(TapeVar v) const;
  std::set<TapeVar> stored() const;
};

struct TapeStats {
  double forward_flops = 0.0;    // whole-model forward
  double recompute_flops = 0.0;  // extra forward work done during backward
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;

  /// Recompute work relative to forward + backward, with backward = 2 x forward.
  double recompute_ratio() const { return forward_flops == 0.0 ? 0.0 : recompute_flops / (3.0 * forward_flops); }
  void add(std::size_t bytes);
  void release(std::size_t bytes);
};

/// Activation tape of one forward call. Consumed by backward.
template <typename T>
struct Tape {
  std::vector<int> tokens;
  RecomputePolicy policy;
  std::vector<LayerTape<T>> layers;
  Grid<T> final_input;   // input of the final norm
  Grid<T> final_normed;  // input of the head
  TapeStats stats;
};

template <typename T>
struct ForwardResult {
  Grid<T> logits;  // l x vocab
  Tape<T> tape;
};

template <typename T>
struct DecoderLayer {
  Grid<T> attn_norm;  // 1 x n
  Grid<T> ffn_norm;   // 1 x n
  std::array<std::unique_ptr<LinearLayer<T>>, 7> linears;  // Q, K, V, O, U, G, D

  LinearLayer<T>& at(MatrixId id);
  const LinearLayer<T>& at(MatrixId id) const;
};

/// Keys and values of every layer, max_seq x n each (one token per row).
template <typename T>
struct KvCache {
  std::vector<Grid<T>> keys;
  std::vector<Grid<T>> values;
  std::size_t current_len = 0;
  std::size_t capacity = 0;
};

template <typename T>
class Model {
 public:
  /// Random initialisation: dense weights N(0, 0.02), norm gains 1. W^E must be dense.
  Model(const ModelConfig& cfg, const LayerSpecMap& specs, std::uint64_t seed);

  /// Assembles a model from existing parts (checkpoint loading).
  Model(const ModelConfig& cfg, Grid<T> embedding, std::vector<DecoderLayer<T>> layers, Grid<T> final_norm,
        std::unique_ptr<LinearLayer<T>> head);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  /// Layer specs as currently built (taken from layer 0 and the head).
  LayerSpecMap specs() const;

  Grid<T>& embedding() noexcept { return embed_; }
  const Grid<T>& embedding() const noexcept { return embed_; }
  DecoderLayer<T>& layer(std::size_t i) { return layers_.at(i); }
  const DecoderLayer<T>& layer(std::size_t i) const { return layers_.at(i); }
  Grid<T>& final_norm() noexcept { return final_norm_; }
  const Grid<T>& final_norm() const noexcept { return final_norm_; }
  LinearLayer<T>& head() { return *head_; }
  const LinearLayer<T>& head() const { return *head_; }

  /// Linear layer by id; kE is not a linear layer and throws.
  LinearLayer<T>& linear(std::size_t layer, MatrixId id);
  const LinearLayer<T>& linear(std::size_t layer, MatrixId id) const;
  /// Replaces one linear layer; shapes must match.
  void replace(std::size_t layer, MatrixId id, std::unique_ptr<LinearLayer<T>> impl);

  /// Every dense tensor, in a fixed order. trainable folds in freezing.
  std::vector<ParamRef<T>> parameters();
  std::vector<std::string> parameter_names() const;
  std::size_t param_count() const;
  std::size_t trainable_count() const;

  void freeze(const std::string& name) { frozen_.insert(name); }
  void unfreeze(const std::string& name) { frozen_.erase(name); }
  const std::set<std::string>& frozen() const noexcept { return frozen_; }
  /// Names that must receive no gradient: frozen ones plus bases.
  std::set<std::string> nontrainable_names() const;

  void set_step(std::size_t step);

  /// Throws ConfigError for an empty sequence, len > max_seq or an id >= vocab.
  ForwardResult<T> forward(std::span<const int> tokens, const RecomputePolicy& policy = {}) const;

  /// Parameter gradients given d(loss)/d(logits). Dropped intermediates are
  /// recomputed from the kept layer inputs. Consumes the tape.
  Gradients<T> backward(Tape<T>& tape, const Grid<T>& dlogits) const;

  /// Fills every missing intermediate of one layer (all heads of scores/probs included).
  void materialize(Tape<T>& tape, std::size_t layer) const;

  KvCache<T> make_cache() const;
  /// Logits for the next position after appending `token` to the cache.
  std::vector<T> decode_step(KvCache<T>& cache, int token) const;

  template <typename U>
  Model<U> cast() const;

 private:
  template <typename>
  friend class Model;

  Model() = default;
  void check_tokens(std::span<const int> tokens) const;
  Grid<T> layer_forward(std::size_t l, const Grid<T>& x, LayerTape<T>& lt, const RecomputePolicy& policy,
                        TapeStats& stats) const;
  Grid<T> layer_backward(std::size_t l, Tape<T>& tape, const Grid<T>& dy, GradSink<T>& sink) const;
  void materialize_impl(Tape<T>& tape, std::size_t l, bool with_attention_probs) const;

  ModelConfig cfg_;
  Grid<T> embed_;  // vocab x n
  std::vector<DecoderLayer<T>> layers_;
  Grid<T> final_norm_;
  std::unique_ptr<LinearLayer<T>> head_;
  std::set<std::string> frozen_;
};

/// "layers.{l}.wq" and friends: prefix of a linear layer's tensors.
std::string layer_prefix(std::size_t layer, MatrixId id);
/// "layers.{l}.attn_norm" / "layers.{l}.ffn_norm"
std::string norm_name(std::size_t layer, const char* which);

struct GenerateResult {
  std::vector<int> tokens;  // generated tokens only
  std::size_t token_passes = 0;
};

/// Greedy decoding of `count` new tokens; the first maximal logit wins ties.
template <typename T>
GenerateResult generate(const Model<T>& model, std::span<const int> prompt, std::size_t count, bool use_cache);

std::size_t argmax(std::span<const float> v);
std::size_t argmax(std::span<const double> v);

}  // namespace lrlm::transformer
