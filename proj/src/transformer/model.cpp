// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/transformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "lrlm/common/error.hpp"
#include "lrlm/kernels/kernels.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"
#include "lrlm/transformer/ops.hpp"

namespace lrlm::transformer {

namespace {

constexpr std::array<std::string_view, kTapeVarCount> kTapeNames{
    "x_e", "xt_e", "q", "k", "v", "qk", "s", "heads", "x_o", "xt_o", "x_u", "x_g", "x_d"};

std::size_t slot_of(MatrixId id) {
  const auto i = static_cast<std::size_t>(id);
  if (i >= 7) throw ConfigError("matrix " + std::string(matrix_name(id)) + " is not a decoder-layer matrix");
  return i;
}

template <typename T>
std::size_t bytes_of(const Grid<T>& g) {
  return g.size() * sizeof(T);
}

}  // namespace

std::string norm_name(std::size_t layer, const char* which) {
  return "layers." + std::to_string(layer) + "." + which;
}

std::string_view tape_var_name(TapeVar v) { return kTapeNames.at(static_cast<std::size_t>(v)); }

std::optional<TapeVar> parse_tape_var(std::string_view name) {
  for (std::size_t i = 0; i < kTapeVarCount; ++i) {
    if (kTapeNames[i] == name) return static_cast<TapeVar>(i);
  }
  if (name == "qkT" || name == "qk^T" || name == "scores") return TapeVar::kScores;
  if (name == "probs" || name == "softmax") return TapeVar::kProbs;
  return std::nullopt;
}

RecomputePolicy RecomputePolicy::selective(std::set<TapeVar> drop) {
  if (drop.count(TapeVar::kInput) != 0) throw ConfigError("recompute policy: the layer input cannot be dropped");
  return {Variant::kSelective, std::move(drop)};
}

bool RecomputePolicy::keeps(TapeVar v) const {
  switch (variant) {
    case Variant::kStoreAll: return true;
    case Variant::kPerLayer: return v == TapeVar::kInput;
    case Variant::kSelective: return drop.count(v) == 0;
  }
  return true;
}

std::string RecomputePolicy::describe() const {
  switch (variant) {
    case Variant::kStoreAll: return "store_all";
    case Variant::kPerLayer: return "per_layer";
    case Variant::kSelective: {
      std::string s = "selective:";
      bool first = true;
      for (TapeVar v : drop) {
        if (!first) s += ",";
        s += tape_var_name(v);
        first = false;
      }
      return s;
    }
  }
  return "?";
}

RecomputePolicy parse_policy(std::string_view text) {
  if (text == "store_all") return RecomputePolicy::store_all();
  if (text == "per_layer") return RecomputePolicy::per_layer();
  constexpr std::string_view prefix = "selective:";
  if (text.substr(0, prefix.size()) == prefix) {
    std::set<TapeVar> drop;
    std::string_view rest = text.substr(prefix.size());
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = rest.substr(0, comma);
      const auto v = parse_tape_var(item);
      if (!v) throw ConfigError("recompute policy: unknown variable '" + std::string(item) + "'");
      drop.insert(*v);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (drop.empty()) throw ConfigError("recompute policy: selective needs at least one variable");
    return RecomputePolicy::selective(std::move(drop));
  }
  throw ConfigError("recompute policy: expected store_all, per_layer or selective:<vars>, got '" + std::string(text) + "'");
}

void TapeStats::add(std::size_t bytes) {
  live_bytes += bytes;
  peak_bytes = std::max(peak_bytes, live_bytes);
}

void TapeStats::release(std::size_t bytes) { live_bytes -= std::min(bytes, live_bytes); }

template <typename T>
const Grid<T>& LayerTape<T>::get(TapeVar v) const {
  const auto& slot = vars[static_cast<std::size_t>(v)];
  if (!slot) throw ConfigError("tape entry '" + std::string(tape_var_name(v)) + "' is missing");
  return *slot;
}

template <typename T>
std::set<TapeVar> LayerTape<T>::stored() const {
  std::set<TapeVar> out;
  for (std::size_t i = 0; i < kTapeVarCount; ++i) {
    if (vars[i]) out.insert(static_cast<TapeVar>(i));
  }
  return out;
}

template <typename T>
LinearLayer<T>& DecoderLayer<T>::at(MatrixId id) {
  return *linears[slot_of(id)];
}

template <typename T>
const LinearLayer<T>& DecoderLayer<T>::at(MatrixId id) const {
  return *linears[slot_of(id)];
}

std::string layer_prefix(std::size_t layer, MatrixId id) {
  return "layers." + std::to_string(layer) + "." + std::string(matrix_name(id));
}

// ---------------------------------------------------------------- construction

template <typename T>
Model<T>::Model(const ModelConfig& cfg, const LayerSpecMap& specs, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  if (spec_for(specs, MatrixId::kE).kind != LinearKind::kDense) {
    throw ConfigError("executable models keep the embedding dense");
  }
  const std::size_t n = cfg_.dim;
  embed_ = linalg::seeded_random<T>(cfg_.vocab, n, linalg::derive_seed(seed, 1), linalg::Gaussian{0.02});
  layers_.resize(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    auto& D = layers_[l];
    D.attn_norm = Grid<T>(1, n, T{1});
    D.ffn_norm = Grid<T>(1, n, T{1});
    for (MatrixId id : kBlockMatrices) {
      const auto [fan_out, fan_in] = matrix_shape(cfg_, id);
      D.linears[slot_of(id)] = make_linear<T>(layer_prefix(l, id), spec_for(specs, id), fan_out, fan_in,
                                              linalg::derive_seed(seed, 100 + 16 * l + static_cast<std::size_t>(id)));
    }
  }
  final_norm_ = Grid<T>(1, n, T{1});
  head_ = make_linear<T>("head", spec_for(specs, MatrixId::kH), cfg_.vocab, n, linalg::derive_seed(seed, 2));
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, Grid<T> embedding, std::vector<DecoderLayer<T>> layers, Grid<T> final_norm,
                std::unique_ptr<LinearLayer<T>> head)
    : cfg_(cfg), embed_(std::move(embedding)), layers_(std::move(layers)), final_norm_(std::move(final_norm)),
      head_(std::move(head)) {
  cfg_.validate();
  const std::size_t n = cfg_.dim;
  if (embed_.rows() != cfg_.vocab || embed_.cols() != n) throw ShapeError("model: embedding shape mismatch");
  if (layers_.size() != cfg_.layers) throw ShapeError("model: layer count mismatch");
  if (final_norm_.rows() != 1 || final_norm_.cols() != n) throw ShapeError("model: final norm shape mismatch");
  if (!head_ || head_->fan_in() != n || head_->fan_out() != cfg_.vocab) throw ShapeError("model: head shape mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& D = layers_[l];
    if (D.attn_norm.cols() != n || D.ffn_norm.cols() != n || D.attn_norm.rows() != 1 || D.ffn_norm.rows() != 1) {
      throw ShapeError("model: norm gain shape mismatch in layer " + std::to_string(l));
    }
    for (MatrixId id : kBlockMatrices) {
      const auto [fan_out, fan_in] = matrix_shape(cfg_, id);
      const auto& lin = D.linears[slot_of(id)];
      if (!lin || lin->fan_out() != fan_out || lin->fan_in() != fan_in) {
        throw ShapeError("model: " + layer_prefix(l, id) + " shape mismatch");
      }
    }
  }
}

template <typename T>
Model<T>::Model(const Model& other)
    : cfg_(other.cfg_), embed_(other.embed_), final_norm_(other.final_norm_), head_(other.head_->clone()),
      frozen_(other.frozen_) {
  layers_.resize(other.layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].attn_norm = other.layers_[l].attn_norm;
    layers_[l].ffn_norm = other.layers_[l].ffn_norm;
    for (std::size_t i = 0; i < 7; ++i) layers_[l].linears[i] = other.layers_[l].linears[i]->clone();
  }
}

template <typename T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  auto convert = [](const LinearLayer<T>& lin) {
    if constexpr (std::is_same_v<U, float>) {
      return lin.to_float();
    } else {
      return lin.to_double();
    }
  };
  Model<U> m;
  m.cfg_ = cfg_;
  m.embed_ = embed_.template cast<U>();
  m.final_norm_ = final_norm_.template cast<U>();
  m.head_ = convert(*head_);
  m.frozen_ = frozen_;
  m.layers_.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    m.layers_[l].attn_norm = layers_[l].attn_norm.template cast<U>();
    m.layers_[l].ffn_norm = layers_[l].ffn_norm.template cast<U>();
    for (std::size_t i = 0; i < 7; ++i) m.layers_[l].linears[i] = convert(*layers_[l].linears[i]);
  }
  return m;
}

template <typename T>
LayerSpecMap Model<T>::specs() const {
  LayerSpecMap out;
  if (!layers_.empty()) {
    for (MatrixId id : kBlockMatrices) {
      const LayerSpec s = layers_[0].at(id).spec();
      if (s.kind != LinearKind::kDense) out[id] = s;
    }
  }
  const LayerSpec h = head_->spec();
  if (h.kind != LinearKind::kDense) out[MatrixId::kH] = h;
  return out;
}

template <typename T>
LinearLayer<T>& Model<T>::linear(std::size_t layer, MatrixId id) {
  if (id == MatrixId::kH) return *head_;
  return layers_.at(layer).at(id);
}

template <typename T>
const LinearLayer<T>& Model<T>::linear(std::size_t layer, MatrixId id) const {
  if (id == MatrixId::kH) return *head_;
  return layers_.at(layer).at(id);
}

template <typename T>
void Model<T>::replace(std::size_t layer, MatrixId id, std::unique_ptr<LinearLayer<T>> impl) {
  LinearLayer<T>& old = linear(layer, id);
  if (!impl || impl->fan_in() != old.fan_in() || impl->fan_out() != old.fan_out()) {
    throw ShapeError("replace: shape mismatch for " + old.name());
  }
  if (id == MatrixId::kH) {
    head_ = std::move(impl);
  } else {
    layers_.at(layer).linears[slot_of(id)] = std::move(impl);
  }
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  out.push_back({"embed.weight", &embed_, true});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& D = layers_[l];
    out.push_back({norm_name(l, "attn_norm"), &D.attn_norm, true});
    for (MatrixId id : {MatrixId::kQ, MatrixId::kK, MatrixId::kV, MatrixId::kO}) D.at(id).parameters(out);
    out.push_back({norm_name(l, "ffn_norm"), &D.ffn_norm, true});
    for (MatrixId id : {MatrixId::kU, MatrixId::kG, MatrixId::kD}) D.at(id).parameters(out);
  }
  out.push_back({"final_norm", &final_norm_, true});
  head_->parameters(out);
  for (auto& p : out) p.trainable = p.trainable && frozen_.count(p.name) == 0;
  return out;
}

template <typename T>
std::vector<std::string> Model<T>::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : const_cast<Model*>(this)->parameters()) names.push_back(p.name);
  return names;
}

template <typename T>
std::set<std::string> Model<T>::nontrainable_names() const {
  std::set<std::string> names;
  for (const auto& p : const_cast<Model*>(this)->parameters()) {
    if (!p.trainable) names.insert(p.name);
  }
  return names;
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t total = embed_.size() + final_norm_.size() + head_->param_count();
  for (const auto& D : layers_) {
    total += D.attn_norm.size() + D.ffn_norm.size();
    for (const auto& lin : D.linears) total += lin->param_count();
  }
  return total;
}

template <typename T>
std::size_t Model<T>::trainable_count() const {
  std::size_t total = 0;
  for (const auto& p : const_cast<Model*>(this)->parameters()) {
    if (p.trainable) total += p.value->size();
  }
  return total;
}

template <typename T>
void Model<T>::set_step(std::size_t step) {
  for (auto& D : layers_) {
    for (auto& lin : D.linears) lin->set_step(step);
  }
  head_->set_step(step);
}

// ---------------------------------------------------------------- forward

template <typename T>
void Model<T>::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw ConfigError("forward: empty token sequence");
  if (tokens.size() > cfg_.max_seq) {
    throw ConfigError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                      std::to_string(cfg_.max_seq));
  }
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab) {
      throw ConfigError("forward: token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg_.vocab));
    }
  }
}

template <typename T>
Grid<T> Model<T>::layer_forward(std::size_t l, const Grid<T>& x, LayerTape<T>& lt, const RecomputePolicy& policy,
                                TapeStats& stats) const {
  const DecoderLayer<T>& D = layers_[l];
  const std::size_t L = x.rows();
  const std::size_t n = cfg_.dim;
  const std::size_t h = cfg_.heads;
  const std::size_t d = cfg_.head_dim();

  std::array<std::optional<Grid<T>>, kTapeVarCount> v;
  auto put = [&](TapeVar var, Grid<T> g) -> const Grid<T>& {
    stats.add(bytes_of(g));
    auto& slot = v[static_cast<std::size_t>(var)];
    slot = std::move(g);
    return *slot;
  };

  put(TapeVar::kInput, x);
  const Grid<T>& xt_e = put(TapeVar::kNormedInput, detail::rmsnorm_rows(x, D.attn_norm.row(0)));
  Grid<T> q = D.at(MatrixId::kQ).forward(xt_e);
  Grid<T> k = D.at(MatrixId::kK).forward(xt_e);
  detail::rope_rows(q, h, 0, cfg_.rope_base);
  detail::rope_rows(k, h, 0, cfg_.rope_base);
  const Grid<T>& qr = put(TapeVar::kQuery, std::move(q));
  const Grid<T>& kr = put(TapeVar::kKey, std::move(k));
  const Grid<T>& vv = put(TapeVar::kValue, D.at(MatrixId::kV).forward(xt_e));

  Grid<T> scores(h * L, L);
  Grid<T> probs(h * L, L);
  Grid<T> heads(L, n);
  for (std::size_t hd = 0; hd < h; ++hd) {
    detail::head_probs(qr.data() + hd * d, kr.data() + hd * d, n, L, d, scores.data() + hd * L * L,
                       probs.data() + hd * L * L);
    detail::head_mix(probs.data() + hd * L * L, vv.data() + hd * d, n, L, d, heads.data() + hd * d);
  }
  put(TapeVar::kScores, std::move(scores));
  put(TapeVar::kProbs, std::move(probs));
  const Grid<T>& hs = put(TapeVar::kHeads, std::move(heads));
  const Grid<T>& attn = put(TapeVar::kAttnOut, D.at(MatrixId::kO).forward(hs));

  Grid<T> x_o = x;
  linalg::add_scaled(x_o, attn);
  const Grid<T>& xt_o = put(TapeVar::kNormedAttnOut, detail::rmsnorm_rows(x_o, D.ffn_norm.row(0)));
  const Grid<T>& u = put(TapeVar::kUp, D.at(MatrixId::kU).forward(xt_o));
  const Grid<T>& g = put(TapeVar::kGate, D.at(MatrixId::kG).forward(xt_o));
  Grid<T> mid(L, cfg_.ffn_dim);
  for (std::size_t i = 0; i < mid.size(); ++i) {
    mid.data()[i] = static_cast<T>(static_cast<double>(u.data()[i]) * silu(static_cast<double>(g.data()[i])));
  }
  const Grid<T>& down = put(TapeVar::kDown, D.at(MatrixId::kD).forward(mid));
  Grid<T> next = std::move(x_o);
  linalg::add_scaled(next, down);

  double flops = 2.0 * static_cast<double>(n * L * (L + 1));
  for (const auto& lin : D.linears) flops += static_cast<double>(L) * lin->flops_per_row();
  stats.forward_flops += flops;

  for (std::size_t i = 0; i < kTapeVarCount; ++i) {
    if (policy.keeps(static_cast<TapeVar>(i))) {
      lt.vars[i] = std::move(v[i]);
    } else {
      stats.release(bytes_of(*v[i]));
    }
  }
  return next;
}

template <typename T>
ForwardResult<T> Model<T>::forward(std::span<const int> tokens, const RecomputePolicy& policy) const {
  check_tokens(tokens);
  if (policy.variant == RecomputePolicy::Variant::kSelective && policy.drop.count(TapeVar::kInput) != 0) {
    throw ConfigError("recompute policy: the layer input cannot be dropped");
  }
  const std::size_t L = tokens.size();
  ForwardResult<T> r;
  Tape<T>& tape = r.tape;
  tape.tokens.assign(tokens.begin(), tokens.end());
  tape.policy = policy;
  tape.layers.resize(layers_.size());

  Grid<T> x(L, cfg_.dim);
  for (std::size_t i = 0; i < L; ++i) {
    const auto src = embed_.row(static_cast<std::size_t>(tokens[i]));
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) x = layer_forward(l, x, tape.layers[l], policy, tape.stats);

  tape.final_normed = detail::rmsnorm_rows(x, final_norm_.row(0));
  tape.final_input = std::move(x);
  tape.stats.add(bytes_of(tape.final_input) + bytes_of(tape.final_normed));
  r.logits = head_->forward(tape.final_normed);
  tape.stats.forward_flops += static_cast<double>(L) * head_->flops_per_row();
  return r;
}

// ---------------------------------------------------------------- recompute

template <typename T>
void Model<T>::materialize_impl(Tape<T>& tape, std::size_t l, bool with_attention_probs) const {
  LayerTape<T>& lt = tape.layers.at(l);
  if (!lt.has(TapeVar::kInput)) {
    throw ConfigError("recompute: kept input of layer " + std::to_string(l) + " is missing");
  }
  const bool strict = tape.policy.variant == RecomputePolicy::Variant::kStoreAll;
  TapeStats& stats = tape.stats;
  const DecoderLayer<T>& D = layers_[l];
  const std::size_t n = cfg_.dim;
  const std::size_t h = cfg_.heads;
  const std::size_t d = cfg_.head_dim();
  const Grid<T>& x = lt.get(TapeVar::kInput);
  const std::size_t L = x.rows();
  const double attn_flops = static_cast<double>(n * L * (L + 1));  // one of qk^T or s v over all heads

  auto missing = [&](TapeVar v) {
    if (lt.has(v)) return false;
    if (strict) {
      throw ConfigError("tape entry '" + std::string(tape_var_name(v)) + "' of layer " + std::to_string(l) +
                        " is missing under store_all");
    }
    return true;
  };
  auto put = [&](TapeVar v, Grid<T> g, double flops) {
    stats.add(bytes_of(g));
    stats.recompute_flops += flops;
    lt.vars[static_cast<std::size_t>(v)] = std::move(g);
  };
  auto linear_flops = [&](MatrixId id) { return static_cast<double>(L) * D.at(id).flops_per_row(); };

  if (missing(TapeVar::kNormedInput)) put(TapeVar::kNormedInput, detail::rmsnorm_rows(x, D.attn_norm.row(0)), 0.0);
  const Grid<T>& xt_e = lt.get(TapeVar::kNormedInput);
  if (missing(TapeVar::kQuery)) {
    Grid<T> q = D.at(MatrixId::kQ).forward(xt_e);
    detail::rope_rows(q, h, 0, cfg_.rope_base);
    put(TapeVar::kQuery, std::move(q), linear_flops(MatrixId::kQ));
  }
  if (missing(TapeVar::kKey)) {
    Grid<T> k = D.at(MatrixId::kK).forward(xt_e);
    detail::rope_rows(k, h, 0, cfg_.rope_base);
    put(TapeVar::kKey, std::move(k), linear_flops(MatrixId::kK));
  }
  if (missing(TapeVar::kValue)) put(TapeVar::kValue, D.at(MatrixId::kV).forward(xt_e), linear_flops(MatrixId::kV));
  const Grid<T>& q = lt.get(TapeVar::kQuery);
  const Grid<T>& k = lt.get(TapeVar::kKey);
  const Grid<T>& v = lt.get(TapeVar::kValue);

  const bool need_scores = missing(TapeVar::kScores);
  const bool need_probs = missing(TapeVar::kProbs);
  if (with_attention_probs && (need_scores || need_probs)) {
    Grid<T> scores(h * L, L);
    Grid<T> probs(h * L, L);
    for (std::size_t hd = 0; hd < h; ++hd) {
      detail::head_probs(q.data() + hd * d, k.data() + hd * d, n, L, d, scores.data() + hd * L * L,
                         probs.data() + hd * L * L);
    }
    stats.recompute_flops += attn_flops;
    if (need_scores) put(TapeVar::kScores, std::move(scores), 0.0);
    if (need_probs) put(TapeVar::kProbs, std::move(probs), 0.0);
  }

  if (missing(TapeVar::kHeads)) {
    Grid<T> heads(L, n);
    if (lt.has(TapeVar::kProbs)) {
      const Grid<T>& probs = lt.get(TapeVar::kProbs);
      for (std::size_t hd = 0; hd < h; ++hd) {
        detail::head_mix(probs.data() + hd * L * L, v.data() + hd * d, n, L, d, heads.data() + hd * d);
      }
    } else {
      // One head's probabilities live at a time.
      std::vector<T> probs(L * L);
      stats.add(probs.size() * sizeof(T));
      for (std::size_t hd = 0; hd < h; ++hd) {
        detail::head_probs(q.data() + hd * d, k.data() + hd * d, n, L, d, static_cast<T*>(nullptr), probs.data());
        detail::head_mix(probs.data(), v.data() + hd * d, n, L, d, heads.data() + hd * d);
      }
      stats.release(probs.size() * sizeof(T));
      stats.recompute_flops += attn_flops;
    }
    put(TapeVar::kHeads, std::move(heads), attn_flops);
  }
  if (missing(TapeVar::kAttnOut)) {
    put(TapeVar::kAttnOut, D.at(MatrixId::kO).forward(lt.get(TapeVar::kHeads)), linear_flops(MatrixId::kO));
  }
  if (missing(TapeVar::kNormedAttnOut)) {
    Grid<T> x_o = x;
    linalg::add_scaled(x_o, lt.get(TapeVar::kAttnOut));
    put(TapeVar::kNormedAttnOut, detail::rmsnorm_rows(x_o, D.ffn_norm.row(0)), 0.0);
  }
  const Grid<T>& xt_o = lt.get(TapeVar::kNormedAttnOut);
  if (missing(TapeVar::kUp)) put(TapeVar::kUp, D.at(MatrixId::kU).forward(xt_o), linear_flops(MatrixId::kU));
  if (missing(TapeVar::kGate)) put(TapeVar::kGate, D.at(MatrixId::kG).forward(xt_o), linear_flops(MatrixId::kG));
  if (missing(TapeVar::kDown)) {
    const Grid<T>& u = lt.get(TapeVar::kUp);
    const Grid<T>& g = lt.get(TapeVar::kGate);
    Grid<T> mid(L, cfg_.ffn_dim);
    for (std::size_t i = 0; i < mid.size(); ++i) {
      mid.data()[i] = static_cast<T>(static_cast<double>(u.data()[i]) * silu(static_cast<double>(g.data()[i])));
    }
    put(TapeVar::kDown, D.at(MatrixId::kD).forward(mid), linear_flops(MatrixId::kD));
  }
}

template <typename T>
void Model<T>::materialize(Tape<T>& tape, std::size_t layer) const {
  materialize_impl(tape, layer, true);
}

// ---------------------------------------------------------------- backward

template <typename T>
Grid<T> Model<T>::layer_backward(std::size_t l, Tape<T>& tape, const Grid<T>& dy, GradSink<T>& sink) const {
  // Without stored head outputs the layer forward is re-executed in full;
  // otherwise attention probabilities are rebuilt one head at a time below.
  materialize_impl(tape, l, !tape.layers.at(l).has(TapeVar::kHeads));
  LayerTape<T>& lt = tape.layers[l];
  const DecoderLayer<T>& D = layers_[l];
  const std::size_t n = cfg_.dim;
  const std::size_t h = cfg_.heads;
  const std::size_t d = cfg_.head_dim();
  const std::size_t m = cfg_.ffn_dim;
  const Grid<T>& x = lt.get(TapeVar::kInput);
  const std::size_t L = x.rows();

  auto gain_slot = [&](const std::string& name) -> T* {
    return sink.wants(name) ? sink.slot(name, 1, n).data() : nullptr;
  };

  // Feed-forward block.
  const Grid<T>& u = lt.get(TapeVar::kUp);
  const Grid<T>& g = lt.get(TapeVar::kGate);
  const Grid<T>& xt_o = lt.get(TapeVar::kNormedAttnOut);
  Grid<T> mid(L, m);
  for (std::size_t i = 0; i < mid.size(); ++i) {
    mid.data()[i] = static_cast<T>(static_cast<double>(u.data()[i]) * silu(static_cast<double>(g.data()[i])));
  }
  const Grid<T> dmid = D.at(MatrixId::kD).backward(mid, dy, sink);
  Grid<T> du(L, m);
  Grid<T> dg(L, m);
  for (std::size_t i = 0; i < mid.size(); ++i) {
    const double gi = g.data()[i];
    du.data()[i] = static_cast<T>(static_cast<double>(dmid.data()[i]) * silu(gi));
    dg.data()[i] = static_cast<T>(static_cast<double>(dmid.data()[i]) * static_cast<double>(u.data()[i]) * silu_grad(gi));
  }
  Grid<T> dxt_o = D.at(MatrixId::kU).backward(xt_o, du, sink);
  linalg::add_scaled(dxt_o, D.at(MatrixId::kG).backward(xt_o, dg, sink));
  Grid<T> x_o = x;
  linalg::add_scaled(x_o, lt.get(TapeVar::kAttnOut));
  Grid<T> dx_o = dy;
  linalg::add_scaled(dx_o, detail::rmsnorm_rows_backward(x_o, D.ffn_norm.row(0), dxt_o, gain_slot(norm_name(l, "ffn_norm"))));

  // Attention block.
  const Grid<T> dheads = D.at(MatrixId::kO).backward(lt.get(TapeVar::kHeads), dx_o, sink);
  const Grid<T>& q = lt.get(TapeVar::kQuery);
  const Grid<T>& k = lt.get(TapeVar::kKey);
  const Grid<T>& v = lt.get(TapeVar::kValue);
  Grid<T> dq(L, n);
  Grid<T> dk(L, n);
  Grid<T> dv(L, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const bool have_probs = lt.has(TapeVar::kProbs);
  std::vector<T> head_buf;
  if (!have_probs) {
    head_buf.resize(L * L);
    tape.stats.add(head_buf.size() * sizeof(T));
  }
  std::vector<double> dp(L);
  for (std::size_t hd = 0; hd < h; ++hd) {
    const std::size_t off = hd * d;
    const T* P;
    if (have_probs) {
      P = lt.get(TapeVar::kProbs).data() + hd * L * L;
    } else {
      detail::head_probs(q.data() + off, k.data() + off, n, L, d, static_cast<T*>(nullptr), head_buf.data());
      tape.stats.recompute_flops += static_cast<double>(d * L * (L + 1));
      P = head_buf.data();
    }
    for (std::size_t i = 0; i < L; ++i) {
      const T* pi = P + i * L;
      const T* dhi = dheads.data() + i * n + off;
      double rowdot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        dp[j] = kernels::dot(dhi, v.data() + j * n + off, d);
        rowdot += static_cast<double>(pi[j]) * dp[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = static_cast<T>(static_cast<double>(pi[j]) * (dp[j] - rowdot) * scale);
        kernels::axpy(ds, k.data() + j * n + off, dq.data() + i * n + off, d);
        kernels::axpy(ds, q.data() + i * n + off, dk.data() + j * n + off, d);
        kernels::axpy(pi[j], dhi, dv.data() + j * n + off, d);
      }
    }
  }
  if (!have_probs) tape.stats.release(head_buf.size() * sizeof(T));
  detail::rope_rows(dq, h, 0, cfg_.rope_base, true);
  detail::rope_rows(dk, h, 0, cfg_.rope_base, true);

  const Grid<T>& xt_e = lt.get(TapeVar::kNormedInput);
  Grid<T> dxt_e = D.at(MatrixId::kQ).backward(xt_e, dq, sink);
  linalg::add_scaled(dxt_e, D.at(MatrixId::kK).backward(xt_e, dk, sink));
  linalg::add_scaled(dxt_e, D.at(MatrixId::kV).backward(xt_e, dv, sink));
  Grid<T> dx = std::move(dx_o);
  linalg::add_scaled(dx, detail::rmsnorm_rows_backward(x, D.attn_norm.row(0), dxt_e, gain_slot(norm_name(l, "attn_norm"))));

  for (auto& slot : lt.vars) {
    if (slot) {
      tape.stats.release(bytes_of(*slot));
      slot.reset();
    }
  }
  return dx;
}

template <typename T>
Gradients<T> Model<T>::backward(Tape<T>& tape, const Grid<T>& dlogits) const {
  if (tape.layers.size() != layers_.size()) throw ConfigError("backward: tape does not belong to this model");
  if (dlogits.rows() != tape.tokens.size() || dlogits.cols() != cfg_.vocab) throw ShapeError("backward: dlogits shape mismatch");
  const std::set<std::string> fixed = nontrainable_names();
  GradSink<T> sink;
  sink.frozen = &fixed;

  const Grid<T> df = head_->backward(tape.final_normed, dlogits, sink);
  T* gain = sink.wants("final_norm") ? sink.slot("final_norm", 1, cfg_.dim).data() : nullptr;
  Grid<T> dx = detail::rmsnorm_rows_backward(tape.final_input, final_norm_.row(0), df, gain);
  tape.stats.release(bytes_of(tape.final_input) + bytes_of(tape.final_normed));
  for (std::size_t l = layers_.size(); l-- > 0;) dx = layer_backward(l, tape, dx, sink);

  if (sink.wants("embed.weight")) {
    Grid<T>& de = sink.slot("embed.weight", cfg_.vocab, cfg_.dim);
    for (std::size_t i = 0; i < tape.tokens.size(); ++i) {
      kernels::axpy(T{1}, dx.data() + i * cfg_.dim, de.data() + static_cast<std::size_t>(tape.tokens[i]) * cfg_.dim, cfg_.dim);
    }
  }
  return std::move(sink.grads);
}

// ---------------------------------------------------------------- decoding

template <typename T>
KvCache<T> Model<T>::make_cache() const {
  KvCache<T> c;
  c.capacity = cfg_.max_seq;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    c.keys.emplace_back(cfg_.max_seq, cfg_.dim);
    c.values.emplace_back(cfg_.max_seq, cfg_.dim);
  }
  return c;
}

template <typename T>
std::vector<T> Model<T>::decode_step(KvCache<T>& cache, int token) const {
  if (cache.keys.size() != layers_.size() || cache.values.size() != layers_.size()) {
    throw ConfigError("decode: cache does not belong to this model");
  }
  if (cache.current_len >= cache.capacity) {
    throw ConfigError("decode: kv cache overflow at length " + std::to_string(cache.current_len));
  }
  const int tok[1] = {token};
  check_tokens(tok);
  const std::size_t pos = cache.current_len;
  const std::size_t n = cfg_.dim;
  const std::size_t h = cfg_.heads;
  const std::size_t d = cfg_.head_dim();

  Grid<T> x(1, n);
  const auto src = embed_.row(static_cast<std::size_t>(token));
  std::copy(src.begin(), src.end(), x.row(0).begin());
  std::vector<T> probs(pos + 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const DecoderLayer<T>& D = layers_[l];
    const Grid<T> xt_e = detail::rmsnorm_rows(x, D.attn_norm.row(0));
    Grid<T> q = D.at(MatrixId::kQ).forward(xt_e);
    Grid<T> k = D.at(MatrixId::kK).forward(xt_e);
    const Grid<T> v = D.at(MatrixId::kV).forward(xt_e);
    detail::rope_rows(q, h, pos, cfg_.rope_base);
    detail::rope_rows(k, h, pos, cfg_.rope_base);
    std::copy(k.data(), k.data() + n, cache.keys[l].row(pos).begin());
    std::copy(v.data(), v.data() + n, cache.values[l].row(pos).begin());
    Grid<T> heads(1, n);
    for (std::size_t hd = 0; hd < h; ++hd) {
      detail::head_probs_row(q.data() + hd * d, cache.keys[l].data() + hd * d, n, pos, d, static_cast<T*>(nullptr),
                             probs.data());
      detail::head_mix_row(probs.data(), cache.values[l].data() + hd * d, n, pos, d, heads.data() + hd * d);
    }
    linalg::add_scaled(x, D.at(MatrixId::kO).forward(heads));
    const Grid<T> xt_o = detail::rmsnorm_rows(x, D.ffn_norm.row(0));
    const Grid<T> u = D.at(MatrixId::kU).forward(xt_o);
    const Grid<T> g = D.at(MatrixId::kG).forward(xt_o);
    Grid<T> mid(1, cfg_.ffn_dim);
    for (std::size_t i = 0; i < mid.size(); ++i) {
      mid.data()[i] = static_cast<T>(static_cast<double>(u.data()[i]) * silu(static_cast<double>(g.data()[i])));
    }
    linalg::add_scaled(x, D.at(MatrixId::kD).forward(mid));
  }
  cache.current_len = pos + 1;
  const Grid<T> logits = head_->forward(detail::rmsnorm_rows(x, final_norm_.row(0)));
  return {logits.data(), logits.data() + logits.size()};
}

template <typename T>
std::size_t argmax_impl(std::span<const T> v) {
  if (v.empty()) throw ShapeError("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::size_t argmax(std::span<const float> v) { return argmax_impl(v); }
std::size_t argmax(std::span<const double> v) { return argmax_impl(v); }

template <typename T>
GenerateResult generate(const Model<T>& model, std::span<const int> prompt, std::size_t count, bool use_cache) {
  if (prompt.empty()) throw ConfigError("generate: empty prompt");
  GenerateResult r;
  if (count == 0) return r;
  if (!use_cache) {
    std::vector<int> seq(prompt.begin(), prompt.end());
    for (std::size_t s = 0; s < count; ++s) {
      const ForwardResult<T> f = model.forward(seq, RecomputePolicy::per_layer());
      r.token_passes += seq.size();
      const auto next = static_cast<int>(argmax(f.logits.row(f.logits.rows() - 1)));
      r.tokens.push_back(next);
      seq.push_back(next);
    }
    return r;
  }
  KvCache<T> cache = model.make_cache();
  std::vector<T> logits;
  for (int t : prompt) {
    logits = model.decode_step(cache, t);
    ++r.token_passes;
  }
  for (std::size_t s = 0; s < count; ++s) {
    const auto next = static_cast<int>(argmax(std::span<const T>(logits)));
    r.tokens.push_back(next);
    if (s + 1 < count) {
      logits = model.decode_step(cache, next);
      ++r.token_passes;
    }
  }
  return r;
}

template struct LayerTape<float>;
template struct LayerTape<double>;
template struct DecoderLayer<float>;
template struct DecoderLayer<double>;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;
template GenerateResult generate(const Model<float>&, std::span<const int>, std::size_t, bool);
template GenerateResult generate(const Model<double>&, std::span<const int>, std::size_t, bool);

}  // namespace lrlm::transformer
