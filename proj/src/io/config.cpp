// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/io/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "lrlm/common/error.hpp"

namespace lrlm::io {

using transformer::LayerSpec;
using transformer::LayerSpecMap;
using transformer::MatrixId;
using transformer::ModelConfig;

namespace {

/// Reads fields of one JSON object and remembers which keys were consumed.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string key_path(const char* key) const { return path_ + "." + key; }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(key_path(key) + ": wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  /// Throws for every key not consumed.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<MatrixId> parse_targets(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of matrix names");
  std::vector<MatrixId> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(path + ": expected matrix names");
    auto id = transformer::parse_matrix(e.get<std::string>());
    if (!id) throw ConfigError(path + ": unknown matrix '" + e.get<std::string>() + "'");
    out.push_back(*id);
  }
  return out;
}

Json targets_json(const std::vector<MatrixId>& ids) {
  Json a = Json::array();
  for (MatrixId id : ids) a.push_back(std::string(transformer::matrix_name(id)));
  return a;
}

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- model

ModelConfig model_from_json(const Json& j, const std::string& path) {
  Section s(j, path);
  ModelConfig c;
  if (s.has("preset")) {
    std::string name;
    s.get("preset", name);
    auto p = transformer::preset(name);
    if (!p) throw ConfigError(path + ".preset: unknown preset '" + name + "'");
    c = *p;
  }
  s.get("name", c.name);
  s.get("vocab", c.vocab);
  s.get("dim", c.dim);
  s.get("heads", c.heads);
  s.get("layers", c.layers);
  s.get("ffn_dim", c.ffn_dim);
  s.get("max_seq", c.max_seq);
  s.get("rope_base", c.rope_base);
  s.get("nominal_params", c.nominal_params);
  if (s.has("family")) {
    std::string f;
    s.get("family", f);
    if (f == "llama") {
      c.family = transformer::Family::kLlama;
    } else if (f == "gpt2") {
      c.family = transformer::Family::kGpt2;
    } else {
      throw ConfigError(path + ".family: expected 'llama' or 'gpt2'");
    }
  }
  s.finish();
  c.validate(true);
  return c;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["name"] = c.name;
  j["family"] = c.family == transformer::Family::kGpt2 ? "gpt2" : "llama";
  j["vocab"] = c.vocab;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["ffn_dim"] = c.ffn_dim;
  j["max_seq"] = c.max_seq;
  j["rope_base"] = c.rope_base;
  j["nominal_params"] = c.nominal_params;
  return j;
}

// ---------------------------------------------------------------- layer specs

LayerSpecMap specs_from_json(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object keyed by matrix name");
  LayerSpecMap out;
  for (const auto& [key, v] : j.items()) {
    auto id = transformer::parse_matrix(key);
    if (!id) throw ConfigError(path + "." + key + ": unknown matrix");
    Section s(v, path + "." + key);
    LayerSpec spec;
    std::string kind = "dense";
    s.get("kind", kind);
    auto k = transformer::parse_kind(kind);
    if (!k) throw ConfigError(path + "." + key + ".kind: unknown kind '" + kind + "'");
    spec.kind = *k;
    s.get("rank", spec.rank);
    s.get("bits", spec.bits);
    s.get("start_alpha", spec.start_alpha);
    s.get("end_step", spec.end_step);
    s.finish();
    out[*id] = spec;
  }
  return out;
}

Json to_json(const LayerSpecMap& specs) {
  Json j = Json::object();
  for (const auto& [id, s] : specs) {
    Json e;
    e["kind"] = std::string(transformer::kind_name(s.kind));
    e["rank"] = s.rank;
    e["bits"] = s.bits;
    e["start_alpha"] = s.start_alpha;
    e["end_step"] = s.end_step;
    j[std::string(transformer::matrix_name(id))] = e;
  }
  return j;
}

Json to_json(const transformer::RecomputePolicy& p) { return p.describe(); }

// ---------------------------------------------------------------- experiment

ExperimentConfig default_experiment() {
  ExperimentConfig e;
  e.model = *transformer::preset("toy");
  return e;
}

ExperimentConfig parse_experiment(const Json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig e = default_experiment();
  Section top(doc, "config");
  if (top.has("model")) e.model = model_from_json(top.raw("model"), "model");
  if (top.has("layers")) e.layers = specs_from_json(top.raw("layers"), "layers");

  if (top.has("train")) {
    Section s(top.raw("train"), "train");
    auto& t = e.train;
    s.get("steps", t.steps);
    s.get("batch", t.batch);
    s.get("seq", t.seq);
    s.get("micro_batches", t.micro_batches);
    s.get("seed", t.seed);
    s.get("lr", t.optim.lr);
    s.get("beta1", t.optim.beta1);
    s.get("beta2", t.optim.beta2);
    s.get("eps", t.optim.eps);
    s.get("weight_decay", t.optim.weight_decay);
    if (s.has("method")) {
      std::string m;
      s.get("method", m);
      auto pm = trainer::parse_method(m);
      if (!pm) throw ConfigError("train.method: unknown method '" + m + "'");
      t.method = *pm;
    }
    if (s.has("recompute")) {
      std::string p;
      s.get("recompute", p);
      try {
        t.recompute = transformer::parse_policy(p);
      } catch (const ConfigError& err) {
        throw ConfigError(std::string("train.recompute: ") + err.what());
      }
    }
    s.finish();
    t.validate();
  }

  if (top.has("hardware")) {
    Section s(top.raw("hardware"), "hardware");
    auto& h = e.hardware;
    s.get("name", h.name);
    if (s.has("tflops")) {
      const Json& r = s.raw("tflops");
      if (!r.is_object()) throw ConfigError("hardware.tflops: expected an object");
      for (const auto& [k, v] : r.items()) {
        auto p = costmodel::parse_precision(k);
        if (!p) throw ConfigError("hardware.tflops." + k + ": unknown precision");
        if (!v.is_number()) throw ConfigError("hardware.tflops." + k + ": wrong type");
        h.tflops[*p] = v.get<double>();
      }
    }
    s.get("gpu_mem_GB", h.gpu_mem_GB);
    s.get("host_link_GBps", h.host_link_GBps);
    s.get("disk_GBps", h.disk_GBps);
    s.get("net_MBps", h.net_MBps);
    s.finish();
    h.validate();
  }

  if (top.has("data")) {
    Section s(top.raw("data"), "data");
    s.get("corpus", e.data.corpus);
    s.get("bytes", e.data.bytes);
    s.finish();
    if (!e.data.corpus.empty()) {
      std::filesystem::path p(e.data.corpus);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      if (!std::filesystem::exists(p)) throw ConfigError("data.corpus: file '" + p.string() + "' does not exist");
      e.data.corpus = p.string();
    }
  }

  if (top.has("lora")) {
    Section s(top.raw("lora"), "lora");
    s.get("rank", e.lora.rank);
    s.get("base_bits", e.lora.base_bits);
    if (s.has("targets")) e.lora.targets = parse_targets(s.raw("targets"), "lora.targets");
    s.finish();
    if (e.lora.rank == 0) throw ConfigError("lora.rank: must be >= 1");
    if (e.lora.base_bits != 0 && e.lora.base_bits != 4 && e.lora.base_bits != 8) {
      throw ConfigError("lora.base_bits: must be 0, 4 or 8");
    }
  }

  if (top.has("blend")) {
    Section s(top.raw("blend"), "blend");
    s.get("rank", e.blend.rank);
    s.get("start_alpha", e.blend.start_alpha);
    s.get("end_step", e.blend.end_step);
    s.finish();
    if (e.blend.rank == 0) throw ConfigError("blend.rank: must be >= 1");
  }

  if (top.has("pipeline")) {
    Section s(top.raw("pipeline"), "pipeline");
    s.get("stages", e.pipeline.stages);
    s.get("micro_batches", e.pipeline.micro_batches);
    s.get("forward_cost", e.pipeline.forward_cost);
    s.get("backward_cost", e.pipeline.backward_cost);
    s.finish();
    if (e.pipeline.stages == 0 || e.pipeline.micro_batches == 0 || !(e.pipeline.forward_cost > 0.0)) {
      throw ConfigError("pipeline: stages, micro_batches >= 1 and forward_cost > 0 required");
    }
  }

  if (top.has("shard")) {
    Section s(top.raw("shard"), "shard");
    s.get("gpus", e.shard.gpus);
    s.finish();
    if (e.shard.gpus == 0) throw ConfigError("shard.gpus: must be >= 1");
  }

  if (top.has("federated")) {
    Section s(top.raw("federated"), "federated");
    s.get("nodes", e.federated.nodes);
    s.get("iterations", e.federated.iterations);
    s.get("net_MBps", e.federated.net_MBps);
    if (s.has("mode")) {
      std::string m;
      s.get("mode", m);
      if (m == "full") {
        e.federated.mode = distsim::FedMode::kFull;
      } else if (m == "lora") {
        e.federated.mode = distsim::FedMode::kLora;
      } else {
        throw ConfigError("federated.mode: expected 'full' or 'lora'");
      }
    }
    s.finish();
    if (e.federated.nodes < 2) throw ConfigError("federated.nodes: must be >= 2");
  }
  top.finish();

  for (const auto& [id, spec] : e.layers) {
    auto [fo, fi] = transformer::matrix_shape(e.model, id);
    spec.validate(fo, fi, transformer::matrix_name(id));
  }
  return e;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  return parse_experiment(read_json_file(path), path.parent_path());
}

Json to_json(const ExperimentConfig& e) {
  Json j;
  j["model"] = to_json(e.model);
  j["layers"] = to_json(e.layers);
  const auto& t = e.train;
  j["train"] = {{"steps", t.steps},
                {"batch", t.batch},
                {"seq", t.seq},
                {"micro_batches", t.micro_batches},
                {"seed", t.seed},
                {"lr", t.optim.lr},
                {"beta1", t.optim.beta1},
                {"beta2", t.optim.beta2},
                {"eps", t.optim.eps},
                {"weight_decay", t.optim.weight_decay},
                {"method", std::string(trainer::method_name(t.method))},
                {"recompute", t.recompute.describe()}};
  Json rates = Json::object();
  for (const auto& [p, r] : e.hardware.tflops) rates[std::string(costmodel::precision_name(p))] = r;
  j["hardware"] = {{"name", e.hardware.name},
                   {"tflops", rates},
                   {"gpu_mem_GB", e.hardware.gpu_mem_GB},
                   {"host_link_GBps", e.hardware.host_link_GBps},
                   {"disk_GBps", e.hardware.disk_GBps},
                   {"net_MBps", e.hardware.net_MBps}};
  j["data"] = {{"corpus", e.data.corpus}, {"bytes", e.data.bytes}};
  j["lora"] = {{"rank", e.lora.rank}, {"base_bits", e.lora.base_bits}, {"targets", targets_json(e.lora.targets)}};
  j["blend"] = {{"rank", e.blend.rank}, {"start_alpha", e.blend.start_alpha}, {"end_step", e.blend.end_step}};
  j["pipeline"] = {{"stages", e.pipeline.stages},
                   {"micro_batches", e.pipeline.micro_batches},
                   {"forward_cost", e.pipeline.forward_cost},
                   {"backward_cost", e.pipeline.backward_cost}};
  j["shard"] = {{"gpus", e.shard.gpus}};
  j["federated"] = {{"nodes", e.federated.nodes},
                    {"iterations", e.federated.iterations},
                    {"net_MBps", e.federated.net_MBps},
                    {"mode", std::string(distsim::fed_mode_name(e.federated.mode))}};
  return j;
}

}  // namespace lrlm::io
