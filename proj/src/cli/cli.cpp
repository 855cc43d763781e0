// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/cli/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "lrlm/cli/reports.hpp"
#include "lrlm/common/error.hpp"
#include "lrlm/common/parallel.hpp"
#include "lrlm/io/checkpoint.hpp"
#include "lrlm/lowrank/decompose.hpp"
#include "lrlm/trainer/gradcheck.hpp"

namespace lrlm::cli {

namespace fs = std::filesystem;
using io::Json;
using transformer::LayerSpecMap;
using transformer::LinearKind;
using transformer::MatrixId;
using transformer::Model;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  std::string run_dir;
  std::string runs_root = "runs";
};

struct Context {
  Common common;
  bool seed_given = false;
  io::ExperimentConfig exp;
  fs::path run_dir;
  std::ostream* out = nullptr;
};

std::vector<MatrixId> parse_target_list(const std::string& text, std::vector<MatrixId> fallback) {
  if (text.empty()) return fallback;
  std::vector<MatrixId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      out.insert(out.end(), transformer::kAllMatrices.begin(), transformer::kAllMatrices.end());
      continue;
    }
    if (item == "blocks") {
      out.insert(out.end(), transformer::kBlockMatrices.begin(), transformer::kBlockMatrices.end());
      continue;
    }
    auto id = transformer::parse_matrix(item);
    if (!id) throw ConfigError("unknown matrix '" + item + "'");
    out.push_back(*id);
  }
  return out;
}

const std::vector<MatrixId> kBlocks(transformer::kBlockMatrices.begin(), transformer::kBlockMatrices.end());
const std::vector<MatrixId> kAll(transformer::kAllMatrices.begin(), transformer::kAllMatrices.end());

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path make_run_dir(const Common& c) {
  fs::path dir;
  if (!c.run_dir.empty()) {
    dir = c.run_dir;
  } else {
    const std::string base = timestamp() + "-" + std::to_string(c.seed);
    dir = fs::path(c.runs_root) / base;
    for (int i = 1; fs::exists(dir); ++i) dir = fs::path(c.runs_root) / (base + "-" + std::to_string(i));
  }
  fs::create_directories(dir);
  return dir;
}

std::vector<int> corpus_tokens(const io::ExperimentConfig& e) {
  if (e.data.corpus.empty()) return trainer::byte_tokenize(trainer::repetitive_corpus(e.data.bytes));
  std::ifstream in(e.data.corpus, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus '" + e.data.corpus + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return trainer::byte_tokenize(ss.str());
}

Model<float> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("--in is required");
  return io::load_checkpoint(path).model;
}

// Paths inside the run directory are reported relative to it so that reports
// do not depend on the timestamp.
Json save_model(const Context& ctx, const Model<float>& model, const std::string& out, std::size_t step = 0) {
  const fs::path target = out.empty() ? ctx.run_dir / "model.lrlm" : fs::path(out);
  io::SaveOptions so;
  so.step = step;
  const auto info = io::save_checkpoint(target, model, so);
  return {{"path", out.empty() ? std::string("model.lrlm") : out},
          {"file_bytes", info.file_bytes},
          {"tensors", info.tensors.size()}};
}

Json train_and_log(Context& ctx, Model<float>& model, trainer::TrainConfig tcfg) {
  const auto tokens = corpus_tokens(ctx.exp);
  const fs::path metrics = ctx.run_dir / "metrics.csv";
  std::ofstream log(metrics);
  const auto res = trainer::train(model, tokens, tcfg, &log);
  Json r;
  r["method"] = std::string(trainer::method_name(tcfg.method));
  r["steps"] = tcfg.steps;
  r["first_loss"] = res.records.empty() ? 0.0 : res.records.front().loss;
  r["final_loss"] = res.records.empty() ? 0.0 : res.records.back().loss;
  r["unigram_entropy"] = trainer::unigram_entropy(tokens);
  r["recompute_ratio"] = res.recompute_ratio;
  r["params"] = model.param_count();
  r["trainable"] = model.trainable_count();
  r["metrics"] = "metrics.csv";
  *ctx.out << "trained " << tcfg.steps << " steps: loss " << r["first_loss"].get<double>() << " -> "
           << r["final_loss"].get<double>() << " (unigram entropy " << r["unigram_entropy"].get<double>() << ")\n";
  return r;
}

// ---------------------------------------------------------------- model commands

struct PretrainOpts {
  std::string method, init, out, recompute;
  std::size_t steps = 0, rank = 0;
  double lr = 0.0;
};

Json cmd_pretrain(Context& ctx, const PretrainOpts& o) {
  auto& tcfg = ctx.exp.train;
  if (!o.method.empty()) {
    auto m = trainer::parse_method(o.method);
    if (!m) throw ConfigError("unknown method '" + o.method + "'");
    tcfg.method = *m;
  }
  if (o.steps) tcfg.steps = o.steps;
  if (o.lr > 0.0) tcfg.optim.lr = o.lr;
  if (!o.recompute.empty()) tcfg.recompute = transformer::parse_policy(o.recompute);
  const std::size_t rank = o.rank ? o.rank : ctx.exp.blend.rank;
  const std::uint64_t seed = tcfg.seed;

  std::optional<Model<float>> model;
  switch (tcfg.method) {
    case trainer::Method::kDense:
      model.emplace(o.init.empty() ? Model<float>(ctx.exp.model, ctx.exp.layers, seed) : load_model(o.init));
      break;
    case trainer::Method::kMethod1: {
      if (!o.init.empty()) {
        model.emplace(load_model(o.init));
      } else {
        LayerSpecMap specs = ctx.exp.layers.empty() ? trainer::lowrank_specs(rank, kBlocks) : ctx.exp.layers;
        model.emplace(ctx.exp.model, specs, seed);
      }
      break;
    }
    case trainer::Method::kMethod2:
      if (o.init.empty()) throw ConfigError("method2 needs --init with a decomposed checkpoint");
      model.emplace(load_model(o.init));
      break;
    case trainer::Method::kMethod3: {
      if (o.init.empty()) throw ConfigError("method3 needs --init with a pretrained dense checkpoint");
      Model<float> base = load_model(o.init);
      if (base.specs().count(MatrixId::kQ) && base.specs().at(MatrixId::kQ).kind == LinearKind::kBlend) {
        model.emplace(std::move(base));
      } else {
        model.emplace(trainer::to_blend(base, rank, ctx.exp.blend.start_alpha, ctx.exp.blend.end_step, seed, kBlocks));
      }
      break;
    }
    case trainer::Method::kLoraFinetune: throw ConfigError("use the finetune command for LoRA");
  }
  trainer::check_method(*model, tcfg.method);
  Json r = train_and_log(ctx, *model, tcfg);
  r["checkpoint"] = save_model(ctx, *model, o.out, tcfg.steps);
  return r;
}

struct DecomposeOpts {
  std::string in, out, targets;
  std::size_t rank = 0, workers = 0;
};

Json cmd_decompose(Context& ctx, const DecomposeOpts& o) {
  if (o.rank == 0) throw ConfigError("--rank is required");
  Model<float> dense = load_model(o.in);
  const auto targets = parse_target_list(o.targets, kBlocks);
  const std::size_t workers = o.workers ? o.workers : max_threads();
  Model<float> low = lowrank::decompose_model(dense, o.rank, workers, targets);
  LayerSpecMap specs;
  for (MatrixId id : targets) specs[id] = {LinearKind::kLowRank, o.rank};
  const auto before = costmodel::count_params(dense.config(), dense.specs()).total;
  const auto after = costmodel::count_params(dense.config(), specs).total;
  Json r;
  r["rank"] = o.rank;
  r["params_before"] = dense.param_count();
  r["params_after"] = low.param_count();
  r["closed_form_before"] = before;
  r["closed_form_after"] = after;
  r["ratio"] = static_cast<double>(after) / static_cast<double>(before);
  r["checkpoint"] = save_model(ctx, low, o.out);
  *ctx.out << "decomposed at rank " << o.rank << ": " << before << " -> " << after << " parameters\n";
  return r;
}

struct FinetuneOpts {
  std::string in, out, targets;
  std::size_t rank = 0, steps = 0;
  int base_bits = -1;
  double lr = 0.0;
};

Json cmd_finetune(Context& ctx, const FinetuneOpts& o) {
  Model<float> base = load_model(o.in);
  const std::size_t rank = o.rank ? o.rank : ctx.exp.lora.rank;
  const int bits = o.base_bits >= 0 ? o.base_bits : ctx.exp.lora.base_bits;
  const auto targets = parse_target_list(o.targets, ctx.exp.lora.targets);
  auto& tcfg = ctx.exp.train;
  tcfg.method = trainer::Method::kLoraFinetune;
  if (o.steps) tcfg.steps = o.steps;
  if (o.lr > 0.0) tcfg.optim.lr = o.lr;
  Model<float> model = trainer::attach_lora(base, rank, bits, tcfg.seed, targets);
  Json r = train_and_log(ctx, model, tcfg);
  r["rank"] = rank;
  r["base_bits"] = bits;
  r["checkpoint"] = save_model(ctx, model, o.out, tcfg.steps);
  return r;
}

Json cmd_quantize(Context& ctx, const std::string& in, const std::string& out, int bits, const std::string& targets) {
  if (bits != 4 && bits != 8) throw ConfigError("--bits must be 4 or 8");
  Model<float> m = load_model(in);
  std::vector<MatrixId> ids = kBlocks;
  ids.push_back(MatrixId::kH);
  Model<float> q = trainer::quantize_model(m, bits, parse_target_list(targets, ids));
  Json r;
  r["bits"] = bits;
  r["input_bytes"] = static_cast<std::uint64_t>(fs::file_size(in));
  r["checkpoint"] = save_model(ctx, q, out);
  *ctx.out << "quantized to " << bits << " bits: " << r["input_bytes"].get<std::uint64_t>() << " -> "
           << r["checkpoint"]["file_bytes"].get<std::uint64_t>() << " bytes\n";
  return r;
}

Json cmd_merge(Context& ctx, const std::string& in, const std::string& out, bool dequantize) {
  Model<float> m = load_model(in);
  Model<float> merged = trainer::merge_adapters(m, dequantize);
  Json r;
  r["dequantize"] = dequantize;
  r["checkpoint"] = save_model(ctx, merged, out);
  *ctx.out << "merged adapters, " << r["checkpoint"]["file_bytes"].get<std::uint64_t>() << " bytes\n";
  return r;
}

Json cmd_infer(Context& ctx, const std::string& in, const std::string& prompt, std::size_t count, bool no_cache) {
  Model<float> m = in.empty() ? Model<float>(ctx.exp.model, ctx.exp.layers, ctx.exp.train.seed) : load_model(in);
  std::vector<int> tokens{trainer::kBosToken};
  const auto body = trainer::byte_tokenize(prompt);
  tokens.insert(tokens.end(), body.begin(), body.end());
  const auto res = transformer::generate(m, tokens, count, !no_cache);
  const std::string text = trainer::detokenize(res.tokens);
  *ctx.out << text << "\n";
  return {{"prompt", prompt}, {"tokens", res.tokens}, {"text", text}, {"token_passes", res.token_passes},
          {"kv_cache", !no_cache}};
}

Json cmd_gradcheck(Context& ctx, const std::string& kind, bool tiny) {
  transformer::ModelConfig cfg = ctx.exp.model;
  if (tiny) {
    cfg.name = "gradcheck";
    cfg.vocab = 32, cfg.dim = 16, cfg.heads = 2, cfg.layers = 2, cfg.ffn_dim = 32, cfg.max_seq = 16;
  }
  const std::uint64_t seed = ctx.exp.train.seed;
  std::vector<std::string> kinds = kind == "all" ? std::vector<std::string>{"dense", "lowrank", "lora", "blend"}
                                                 : std::vector<std::string>{kind};
  std::vector<int> seq(cfg.max_seq < 9 ? cfg.max_seq : 9);
  linalg::SplitMix64 rng(linalg::derive_seed(seed, 11));
  for (auto& t : seq) t = static_cast<int>(rng.below(cfg.vocab));
  std::span<const int> all(seq);
  auto inputs = all.first(all.size() - 1);
  auto targets = all.subspan(1);

  Json r = Json::object();
  bool ok = true;
  for (const auto& k : kinds) {
    const std::size_t rank = std::max<std::size_t>(1, cfg.dim / 4);
    Model<float> m(cfg, {}, seed);
    if (k == "lowrank") {
      m = Model<float>(cfg, trainer::lowrank_specs(rank, kBlocks), seed);
    } else if (k == "lora") {
      m = trainer::attach_lora(m, rank, 0, seed, kBlocks);
      // Non-zero up factors so the adapter gradient is exercised.
      linalg::SplitMix64 g(linalg::derive_seed(seed, 12));
      for (auto& p : m.parameters()) {
        if (p.trainable) {
          for (auto& v : p.value->values()) v = static_cast<float>((g.uniform() - 0.5) * 0.1);
        }
      }
    } else if (k == "blend") {
      m = trainer::to_blend(m, rank, 0.7, 10, seed, kBlocks);
      m.set_step(3);
    } else if (k != "dense") {
      throw ConfigError("unknown gradcheck kind '" + k + "'");
    }
    const auto rep = trainer::grad_check(m, inputs, targets);
    r[k] = {{"max_rel_error", rep.max_rel_error}, {"worst", rep.worst}, {"checked", rep.checked}, {"passed", rep.passed}};
    *ctx.out << k << ": max rel error " << rep.max_rel_error << " at " << rep.worst << (rep.passed ? " PASS" : " FAIL")
             << "\n";
    ok = ok && rep.passed;
  }
  if (!ok) {
    std::ofstream(ctx.run_dir / "report.json") << Json{{"command", "gradcheck"}, {"result", r}}.dump(2) << "\n";
    throw NumericError("gradcheck", "gradient check exceeded tolerance");
  }
  return r;
}

// ---------------------------------------------------------------- plan

struct PlanOpts {
  std::size_t lowrank = 0, lora = 0, batch = 1, seq = 0, in = 100, gen = 100, stages = 0, micro = 0, gpus = 0,
              nodes = 0;
  std::string targets, precision = "fp16", policy = "store_all", method, profile = "a100";
  bool exact = false, no_cache = false, gantt = true;
  double params = 0.0, f = 0.0, b = 0.0, model_gb = 0.0, adapter_params = 0.0, trainable_params = -1.0, net = 0.0;
  std::uint64_t iterations = 0;
};

LayerSpecMap plan_specs(const Context& ctx, const PlanOpts& o) {
  LayerSpecMap specs = ctx.exp.layers;
  if (o.lowrank) {
    for (MatrixId id : parse_target_list(o.targets, kAll)) specs[id] = {LinearKind::kLowRank, o.lowrank};
  }
  if (o.lora) {
    for (MatrixId id : parse_target_list(o.targets, ctx.exp.lora.targets)) specs[id] = {LinearKind::kLora, o.lora};
  }
  if (ctx.exp.model.family == transformer::Family::kGpt2) specs.erase(MatrixId::kG);
  return specs;
}

std::string plan_method(const Context& ctx, const PlanOpts& o) {
  if (!o.method.empty()) return o.method;
  if (o.lora) return "lora_finetune";
  return std::string(trainer::method_name(ctx.exp.train.method));
}

costmodel::Precision plan_precision(const std::string& s) {
  auto p = costmodel::parse_precision(s);
  if (!p) throw ConfigError("unknown precision '" + s + "'");
  return *p;
}

Json cmd_plan(Context& ctx, const std::string& what, const PlanOpts& o) {
  const auto& cfg = ctx.exp.model;
  std::ostream& out = *ctx.out;
  const LayerSpecMap specs = plan_specs(ctx, o);
  const std::string method = plan_method(ctx, o);
  if (what == "params") {
    const auto rep = costmodel::count_params(cfg, specs, method);
    out << cfg.name << "\n" << params_table(rep);
    Json r = to_json(rep);
    r["model_size_bytes"] = costmodel::model_size_bytes(cfg, specs, plan_precision(o.precision));
    return r;
  }
  if (what == "mem") {
    costmodel::MemoryOptions mo;
    mo.batch = o.batch;
    mo.seq = o.seq;
    mo.precision = plan_precision(o.precision);
    mo.policy = transformer::parse_policy(o.policy);
    mo.method = method;
    mo.nominal = !o.exact;
    const auto rep = costmodel::memory_report(cfg, specs, mo);
    out << memory_table(rep);
    const auto off = distsim::offload_peak({rep.params_bytes, rep.grads_bytes, rep.optimizer_bytes, rep.intermediates_bytes});
    out << "offload peak " << off.peak / 1e9 << " GB (naive " << off.naive / 1e9 << " GB)\n";
    Json r = to_json(rep);
    r["policy"] = mo.policy.describe();
    r["offload"] = to_json(off);
    return r;
  }
  if (what == "flops") {
    double count = o.params;
    if (count <= 0.0) {
      count = specs.empty() && cfg.nominal_params > 0.0 && !o.exact
                  ? cfg.nominal_params
                  : static_cast<double>(costmodel::count_params(cfg, specs).total);
    }
    auto w = costmodel::inference_workload(o.in, o.gen, count, !o.no_cache);
    auto profile = o.profile == "phone" ? costmodel::HardwareProfile::phone()
                   : o.profile == "a100" ? ctx.exp.hardware
                                         : throw ConfigError("unknown profile '" + o.profile + "'");
    for (const auto& [p, rate] : profile.tflops) w.seconds[p] = costmodel::throughput_estimate(w.total_flops, profile, p);
    out << "flops/token " << w.flops_per_token << ", passes " << w.token_passes << ", total " << w.total_flops / 1e12
        << " TFLOP\n";
    for (const auto& [p, s] : w.seconds) out << "  " << costmodel::precision_name(p) << ": " << s << " s\n";
    Json r = to_json(w);
    r["profile"] = profile.name;
    return r;
  }
  if (what == "pipeline") {
    const std::size_t N = o.stages ? o.stages : ctx.exp.pipeline.stages;
    const std::size_t M = o.micro ? o.micro : ctx.exp.pipeline.micro_batches;
    const double f = o.f > 0.0 ? o.f : ctx.exp.pipeline.forward_cost;
    const double b = o.b > 0.0 ? o.b : ctx.exp.pipeline.backward_cost;
    const auto plan = distsim::pipeline_schedule(N, M, f, b);
    if (o.gantt) out << plan.gantt();
    out << "utilization " << plan.utilization << " (M/(N+M-1) = " << distsim::pipeline_utilization(N, M) << ")\n";
    Json r = to_json(plan);
    r["gantt"] = plan.gantt();
    return r;
  }
  if (what == "shard") {
    const std::size_t G = o.gpus ? o.gpus : ctx.exp.shard.gpus;
    const double count = cfg.nominal_params > 0.0 && !o.exact ? cfg.nominal_params
                                                              : static_cast<double>(costmodel::count_params(cfg, specs).total);
    const double model_bytes = o.model_gb > 0.0 ? o.model_gb * 1e9 : count * 2.0;
    const double trainable = o.trainable_params >= 0.0 ? o.trainable_params : model_bytes / 2.0;
    const auto plan = distsim::shard_plan(model_bytes, trainable, G);
    out << "per GPU " << plan.per_gpu_bytes / 1e9 << " GB on " << G << " GPUs (unsharded "
        << (plan.params_bytes + plan.grads_bytes + plan.optimizer_bytes) / 1e9 << " GB)\n";
    return to_json(plan);
  }
  if (what == "federated") {
    distsim::FederatedConfig fc;
    fc.nodes = o.nodes ? o.nodes : ctx.exp.federated.nodes;
    fc.iterations = o.iterations ? o.iterations : ctx.exp.federated.iterations;
    fc.net_MBps = o.net > 0.0 ? o.net : ctx.exp.federated.net_MBps;
    if (o.adapter_params > 0.0) {
      fc.payload_bytes = o.adapter_params * 2.0;
    } else if (o.model_gb > 0.0) {
      fc.payload_bytes = o.model_gb * 1e9;
    } else {
      const double count = cfg.nominal_params > 0.0 ? cfg.nominal_params
                                                    : static_cast<double>(costmodel::count_params(cfg, specs).total);
      fc.payload_bytes = count * 2.0;
    }
    const auto rep = distsim::federated_comm_report(fc);
    out << "center " << rep.center_per_iter / 1e9 << " GB/iter, worker " << rep.worker_per_iter / 1e9
        << " GB/iter; total center " << rep.center_total / 1e15 << " PB over " << fc.iterations << " iterations\n";
    Json r = to_json(rep);
    r["nodes"] = fc.nodes;
    r["payload_bytes"] = fc.payload_bytes;
    r["iterations"] = fc.iterations;
    return r;
  }
  throw ConfigError("unknown plan '" + what + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-rank language model toolkit", "lrlm"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  ctx.out = &out;
  Common& c = ctx.common;
  app.add_option("--config", c.config, "JSON experiment config");
  app.add_option("--preset", c.preset, "model preset (llama2-7b, llama2-13b, llama2-70b, gpt2-127m, gpt2-1.5b, toy)");
  auto* seed_opt = app.add_option("--seed", c.seed, "random seed");
  app.add_option("--run-dir", c.run_dir, "directory for report.json and artifacts");
  app.add_option("--runs-root", c.runs_root, "parent of timestamped run directories");

  std::function<Json()> action;
  std::string command;

  PretrainOpts pre;
  auto* s_pre = app.add_subcommand("pretrain", "train from scratch (dense, method1) or continue (method2, method3)");
  s_pre->add_option("--method", pre.method);
  s_pre->add_option("--init", pre.init, "starting checkpoint");
  s_pre->add_option("--out", pre.out, "output checkpoint");
  s_pre->add_option("--steps", pre.steps);
  s_pre->add_option("--rank", pre.rank);
  s_pre->add_option("--lr", pre.lr);
  s_pre->add_option("--recompute", pre.recompute, "store_all | per_layer | selective:qk,s");
  s_pre->callback([&] { command = "pretrain"; action = [&] { return cmd_pretrain(ctx, pre); }; });

  DecomposeOpts dec;
  auto* s_dec = app.add_subcommand("decompose", "replace dense layers by truncated SVD factors");
  s_dec->add_option("--in", dec.in)->required();
  s_dec->add_option("--out", dec.out);
  s_dec->add_option("--rank", dec.rank)->required();
  s_dec->add_option("--targets", dec.targets, "comma-separated matrices, 'blocks' or 'all'");
  s_dec->add_option("--workers", dec.workers);
  s_dec->callback([&] { command = "decompose"; action = [&] { return cmd_decompose(ctx, dec); }; });

  FinetuneOpts fin;
  auto* s_fin = app.add_subcommand("finetune", "LoRA finetuning of a checkpoint");
  s_fin->add_option("--in", fin.in)->required();
  s_fin->add_option("--out", fin.out);
  s_fin->add_option("--rank", fin.rank);
  s_fin->add_option("--base-bits", fin.base_bits, "0, 4 or 8");
  s_fin->add_option("--targets", fin.targets);
  s_fin->add_option("--steps", fin.steps);
  s_fin->add_option("--lr", fin.lr);
  s_fin->callback([&] { command = "finetune"; action = [&] { return cmd_finetune(ctx, fin); }; });

  std::string q_in, q_out, q_targets;
  int q_bits = 8;
  auto* s_q = app.add_subcommand("quantize", "row-quantize dense layers");
  s_q->add_option("--in", q_in)->required();
  s_q->add_option("--out", q_out);
  s_q->add_option("--bits", q_bits);
  s_q->add_option("--targets", q_targets);
  s_q->callback([&] { command = "quantize"; action = [&] { return cmd_quantize(ctx, q_in, q_out, q_bits, q_targets); }; });

  std::string m_in, m_out;
  bool m_deq = false;
  auto* s_m = app.add_subcommand("merge", "fold LoRA adapters into dense weights");
  s_m->add_option("--in", m_in)->required();
  s_m->add_option("--out", m_out);
  s_m->add_flag("--dequantize", m_deq, "allow merging over a quantized base");
  s_m->callback([&] { command = "merge"; action = [&] { return cmd_merge(ctx, m_in, m_out, m_deq); }; });

  std::string i_in, i_prompt;
  std::size_t i_tokens = 32;
  bool i_nocache = false;
  auto* s_i = app.add_subcommand("infer", "greedy generation");
  s_i->add_option("--in", i_in);
  s_i->add_option("--prompt", i_prompt);
  s_i->add_option("--tokens", i_tokens);
  s_i->add_flag("--no-cache", i_nocache);
  s_i->callback([&] { command = "infer"; action = [&] { return cmd_infer(ctx, i_in, i_prompt, i_tokens, i_nocache); }; });

  std::string g_kind = "all";
  bool g_model = false;
  auto* s_g = app.add_subcommand("gradcheck", "finite-difference gradient check");
  s_g->add_option("--kind", g_kind, "dense | lowrank | lora | blend | all");
  s_g->add_flag("--use-config-model", g_model, "check the configured model instead of a small one");
  s_g->callback([&] { command = "gradcheck"; action = [&] { return cmd_gradcheck(ctx, g_kind, !g_model); }; });

  PlanOpts po;
  auto* s_plan = app.add_subcommand("plan", "closed-form accounting and simulation");
  s_plan->require_subcommand(1);
  auto add_shape_opts = [&](CLI::App* s) {
    s->add_option("--lowrank", po.lowrank, "rank of low-rank layers");
    s->add_option("--lora", po.lora, "rank of LoRA adapters");
    s->add_option("--targets", po.targets, "matrices for --lowrank/--lora");
    s->add_option("--method", po.method);
    s->add_option("--precision", po.precision, "fp32 | fp16 | int8 | int4");
    s->add_flag("--exact", po.exact, "price with exact counts instead of nominal sizes");
  };
  auto* p_params = s_plan->add_subcommand("params", "parameter breakdown");
  add_shape_opts(p_params);
  auto* p_mem = s_plan->add_subcommand("mem", "training memory footprint");
  add_shape_opts(p_mem);
  p_mem->add_option("--batch", po.batch);
  p_mem->add_option("--seq", po.seq);
  p_mem->add_option("--policy", po.policy, "store_all | per_layer | selective:qk,s");
  auto* p_flops = s_plan->add_subcommand("flops", "inference workload");
  add_shape_opts(p_flops);
  p_flops->add_option("--params", po.params, "parameter count override");
  p_flops->add_option("--in", po.in);
  p_flops->add_option("--gen", po.gen);
  p_flops->add_flag("--no-cache", po.no_cache);
  p_flops->add_option("--profile", po.profile, "a100 | phone");
  auto* p_pipe = s_plan->add_subcommand("pipeline", "GPipe schedule");
  p_pipe->add_option("--stages", po.stages);
  p_pipe->add_option("--micro", po.micro);
  p_pipe->add_option("--f", po.f);
  p_pipe->add_option("--b", po.b);
  auto* p_shard = s_plan->add_subcommand("shard", "optimizer-state sharding");
  add_shape_opts(p_shard);
  p_shard->add_option("--gpus", po.gpus);
  p_shard->add_option("--model-gb", po.model_gb);
  p_shard->add_option("--trainable-params", po.trainable_params);
  auto* p_fed = s_plan->add_subcommand("federated", "federated communication volume");
  add_shape_opts(p_fed);
  p_fed->add_option("--nodes", po.nodes);
  p_fed->add_option("--model-gb", po.model_gb);
  p_fed->add_option("--adapter-params", po.adapter_params);
  p_fed->add_option("--iterations", po.iterations);
  p_fed->add_option("--net-MBps", po.net);
  for (auto* p : {p_params, p_mem, p_flops, p_pipe, p_shard, p_fed}) {
    const std::string name = p->get_name();
    p->callback([&, name] {
      command = "plan " + name;
      action = [&, name] { return cmd_plan(ctx, name, po); };
    });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ctx.seed_given = seed_opt->count() > 0;
    ctx.exp = c.config.empty() ? io::default_experiment() : io::load_experiment(c.config);
    if (!c.preset.empty()) {
      auto p = transformer::preset(c.preset);
      if (!p) throw ConfigError("unknown preset '" + c.preset + "'");
      ctx.exp.model = *p;
    }
    if (ctx.seed_given) ctx.exp.train.seed = c.seed;
    c.seed = ctx.exp.train.seed;
    ctx.run_dir = make_run_dir(c);
    Json result = action();
    Json report;
    report["command"] = command;
    report["seed"] = ctx.exp.train.seed;
    report["config"] = io::to_json(ctx.exp);
    report["result"] = result;
    std::ofstream(ctx.run_dir / "report.json") << report.dump(2) << "\n";
    out << "report: " << (ctx.run_dir / "report.json").string() << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace lrlm::cli
