// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "lrlm/common/error.hpp"
#include "lrlm/linalg/ops.hpp"
#include "lrlm/linalg/random.hpp"
#include "lrlm/trainer/gradcheck.hpp"
#include "lrlm/trainer/trainer.hpp"
#include "lrlm/transformer/ops.hpp"
#include "support/oracles.hpp"

namespace {

using namespace lrlm::trainer;
using lrlm::linalg::Grid;
using lrlm::transformer::LayerSpecMap;
using lrlm::transformer::LinearKind;
using lrlm::transformer::MatrixId;
using lrlm::transformer::ModelConfig;

ModelConfig tiny(std::size_t vocab = 32) {
  ModelConfig c;
  c.name = "tiny";
  c.vocab = vocab, c.dim = 16, c.heads = 2, c.layers = 2, c.ffn_dim = 32, c.max_seq = 16;
  return c;
}

std::vector<int> tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  lrlm::linalg::SplitMix64 rng(seed);
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng.below(vocab));
  return t;
}

// Randomises every adapter/parallel "up" factor so that no gradient is
// trivially zero.
void wake_up_factors(Model<float>& m) {
  std::uint64_t seed = 100;
  for (auto& p : m.parameters()) {
    const auto& n = p.name;
    if (n.size() > 3 && n.compare(n.size() - 3, 3, ".up") == 0) {
      *p.value = lrlm::linalg::seeded_random<float>(p.value->rows(), p.value->cols(), ++seed,
                                                    lrlm::linalg::Gaussian{0.05});
    }
  }
}

TEST(AdamW, MatchesHandComputedSteps) {
  Grid<float> w(1, 2);
  w(0, 0) = 1.0f;
  w(0, 1) = -2.0f;
  std::vector<lrlm::transformer::ParamRef<float>> params{{"w", &w, true}};
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamWState st;
  const double g1[2] = {0.5, -0.25};
  const double g2[2] = {-1.0, 0.75};
  double m[2] = {0, 0}, v[2] = {0, 0}, ww[2] = {1.0, -2.0};
  for (int s = 1; s <= 2; ++s) {
    const double* g = s == 1 ? g1 : g2;
    lrlm::transformer::Gradients<float> grads;
    grads.emplace("w", Grid<float>(1, 2, std::vector<float>{float(g[0]), float(g[1])}));
    st.step(params, grads, cfg);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, s));
      const double vh = v[i] / (1 - std::pow(0.999, s));
      ww[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.5 * ww[i]);
      EXPECT_EQ(w(0, i), static_cast<float>(ww[i])) << s << "," << i;
    }
  }
  EXPECT_EQ(st.steps(), 2u);
  EXPECT_EQ(st.state_bytes(), 3u * 2u * sizeof(double));
}

TEST(AdamW, RejectsBadInputsWithoutSideEffects) {
  Grid<float> w(1, 2, 1.0f);
  Grid<float> frozen(1, 1, 3.0f);
  std::vector<lrlm::transformer::ParamRef<float>> params{{"w", &w, true}, {"f", &frozen, false}};
  AdamWState st;
  lrlm::transformer::Gradients<float> grads;
  grads.emplace("w", Grid<float>(1, 2, std::vector<float>{1.0f, std::nanf("")}));
  try {
    st.step(params, grads, {});
    FAIL();
  } catch (const lrlm::NumericError& e) {
    EXPECT_EQ(e.subject(), "w");
  }
  EXPECT_EQ(w(0, 0), 1.0f);
  EXPECT_EQ(st.steps(), 0u);
  lrlm::transformer::Gradients<float> none;
  EXPECT_THROW(st.step(params, none, {}), lrlm::ConfigError);
  AdamWConfig bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), lrlm::ConfigError);
}

class GradCheck : public ::testing::TestWithParam<const char*> {};

TEST_P(GradCheck, AnalyticMatchesCentralDifferences) {
  const std::string kind = GetParam();
  LayerSpecMap specs;
  if (kind == "lowrank") {
    for (MatrixId id : lrlm::transformer::kBlockMatrices) specs[id] = {LinearKind::kLowRank, 4};
    specs[MatrixId::kH] = {LinearKind::kLowRank, 4};
  } else if (kind == "lora") {
    for (MatrixId id : lrlm::transformer::kBlockMatrices) specs[id] = {LinearKind::kLora, 3};
  } else if (kind == "blend") {
    for (MatrixId id : lrlm::transformer::kBlockMatrices) specs[id] = {LinearKind::kBlend, 4, 0, 1.0, 8};
  }
  Model<float> m(tiny(), specs, 21);
  wake_up_factors(m);
  if (kind == "blend") m.set_step(3);
  if (kind == "lora") freeze_for_lora(m);
  auto t = tokens(9, 32, 4);
  std::vector<int> in(t.begin(), t.end() - 1), tg(t.begin() + 1, t.end());
  GradCheckOptions opts;
  opts.entries_per_tensor = 0;
  auto rep = grad_check(m, in, tg, opts);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  EXPECT_LE(rep.max_rel_error, 1e-3);
  EXPECT_GT(rep.checked, 100u);
}

INSTANTIATE_TEST_SUITE_P(Kinds, GradCheck, ::testing::Values("dense", "lowrank", "lora", "blend"));

TEST(GradCheckOracle, LossMatchesReference) {
  Model<double> m(tiny(), {}, 2);
  auto t = tokens(10, 32, 1);
  std::vector<int> in(t.begin(), t.end() - 1), tg(t.begin() + 1, t.end());
  const double ours = lrlm::transformer::cross_entropy_loss(m.forward(in).logits, tg);
  EXPECT_NEAR(ours, lrlm::testing::reference_loss(lrlm::testing::extract_weights(m), in, tg), 1e-12);
}

Batch make_batch(std::size_t windows, std::size_t seq, std::uint64_t seed) {
  BatchSampler s(tokens(400, 32, seed), windows, seq, seed);
  return s.next();
}

TEST(Step, MicroBatchesGiveMeanGradient) {
  Model<float> m(tiny(), {}, 3);
  auto b = make_batch(4, 8, 5);
  TrainConfig one;
  one.batch = 4, one.seq = 8;
  TrainConfig two = one;
  two.micro_batches = 2;
  auto g1 = batch_gradients(m, b, one);
  auto g2 = batch_gradients(m, b, two);
  for (const auto& [name, g] : g1) {
    const auto& h = g2.at(name);
    const double scale = std::max(lrlm::linalg::frobenius_norm(g), 1e-30);
    double err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(double(g.data()[i]) - h.data()[i]));
    EXPECT_LE(err / scale, 1e-6) << name;
  }
  TrainConfig bad = one;
  bad.micro_batches = 5;
  EXPECT_THROW(batch_gradients(m, b, bad), lrlm::ConfigError);
}

TEST(Step, BatchGradientIsMeanOfWindowGradients) {
  Model<float> m(tiny(), {}, 3);
  auto b = make_batch(3, 8, 6);
  TrainConfig cfg;
  cfg.batch = 3, cfg.seq = 8;
  StepResult stats;
  auto g = batch_gradients(m, b, cfg, &stats);
  lrlm::transformer::Gradients<double> mean;
  double loss = 0.0;
  for (std::size_t w = 0; w < 3; ++w) {
    auto f = m.forward(b.inputs[w]);
    Grid<float> d;
    loss += lrlm::transformer::cross_entropy_with_grad(f.logits, std::span<const int>(b.targets[w]), d);
    for (auto& [name, gw] : m.backward(f.tape, d)) {
      auto& acc = mean.try_emplace(name, gw.rows(), gw.cols(), 0.0).first->second;
      for (std::size_t i = 0; i < gw.size(); ++i) acc.data()[i] += gw.data()[i] / 3.0;
    }
  }
  EXPECT_NEAR(stats.loss, loss / 3.0, 1e-12);
  for (const auto& [name, acc] : mean) {
    const auto& h = g.at(name);
    for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(h.data()[i], acc.data()[i], 1e-6 * (1 + std::abs(acc.data()[i])));
  }
}

TEST(Step, FrozenWeightsStayBitIdentical) {
  Model<float> base(tiny(), {}, 4);
  auto m = attach_lora(base, 2, 0, 9, kDefaultLoraTargets);
  const Model<float> before = m;
  TrainConfig cfg;
  cfg.batch = 2, cfg.seq = 8, cfg.steps = 3, cfg.method = Method::kLoraFinetune;
  cfg.optim.lr = 1e-2;
  train(m, tokens(300, 32, 2), cfg);
  auto pa = m.parameters();
  auto pb = const_cast<Model<float>&>(before).parameters();
  bool adapter_moved = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const bool adapter = pa[i].name.find(".down") != std::string::npos || pa[i].name.find(".up") != std::string::npos;
    const bool same = std::equal(pa[i].value->values().begin(), pa[i].value->values().end(), pb[i].value->values().begin(),
                                 [](float x, float y) { return std::memcmp(&x, &y, sizeof x) == 0; });
    if (adapter) {
      adapter_moved |= !same;
    } else {
      EXPECT_TRUE(same) << pa[i].name;
    }
  }
  EXPECT_TRUE(adapter_moved);
}

TEST(Train, FixedSeedGivesIdenticalMetrics) {
  auto run = [] {
    Model<float> m(tiny(), {}, 8);
    TrainConfig cfg;
    cfg.batch = 2, cfg.seq = 8, cfg.steps = 5, cfg.seed = 3, cfg.micro_batches = 2;
    std::ostringstream log;
    train(m, tokens(300, 32, 2), cfg, &log);
    return log.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.substr(0, a.find('\n')), kMetricsHeader);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 6);
}

TEST(Train, LossDecreasesOnRepetitiveText) {
  auto corpus = byte_tokenize(repetitive_corpus(2000));
  Model<float> m(tiny(kByteVocab), {}, 1);
  TrainConfig cfg;
  cfg.batch = 4, cfg.seq = 16, cfg.steps = 40;
  cfg.optim.lr = 3e-3;
  auto r = train(m, corpus, cfg);
  EXPECT_LT(r.records.back().loss, r.records.front().loss - 1.0);
}

TEST(Methods, CheckMethod) {
  Model<float> dense(tiny(), {}, 1);
  EXPECT_NO_THROW(check_method(dense, Method::kDense));
  EXPECT_THROW(check_method(dense, Method::kMethod1), lrlm::ConfigError);
  EXPECT_THROW(check_method(dense, Method::kLoraFinetune), lrlm::ConfigError);
  Model<float> lr(tiny(), lowrank_specs(4, lrlm::transformer::kBlockMatrices), 1);
  EXPECT_NO_THROW(check_method(lr, Method::kMethod1));
  EXPECT_THROW(check_method(lr, Method::kDense), lrlm::ConfigError);
  EXPECT_EQ(parse_method("method3"), Method::kMethod3);
  EXPECT_FALSE(parse_method("method4"));
}

TEST(Methods, BlendStartsAsPretrainedAndEndsLowRank) {
  Model<float> pre(tiny(), {}, 2);
  auto b = to_blend(pre, 4, 1.0, 10, 5, lrlm::transformer::kBlockMatrices);
  auto t = tokens(8, 32, 1);
  EXPECT_EQ(lrlm::linalg::max_abs_diff(pre.forward(t).logits, b.forward(t).logits), 0.0);
  EXPECT_EQ(model_alpha(b), 1.0);
  b.set_step(5);
  EXPECT_DOUBLE_EQ(model_alpha(b), 0.5);
  // The trainable set excludes the frozen bases.
  const std::size_t bases = 2 * (4 * 16 * 16 + 3 * 16 * 32);
  EXPECT_EQ(b.trainable_count(), b.param_count() - bases);
}

TEST(Methods, LoraMergeEquivalence) {
  Model<float> base(tiny(), {}, 2);
  auto m = attach_lora(base, 4, 0, 7, kDefaultLoraTargets);
  wake_up_factors(m);
  auto merged = merge_adapters(m, false);
  EXPECT_EQ(merged.linear(0, MatrixId::kQ).kind(), LinearKind::kDense);
  auto t = tokens(12, 32, 3);
  auto a = m.forward(t).logits;
  auto c = merged.forward(t).logits;
  double scale = 0.0;
  for (float x : a.values()) scale = std::max(scale, double(std::abs(x)));
  EXPECT_LE(lrlm::linalg::max_abs_diff(a, c), 1e-5 * std::max(1.0, scale));

  auto q = attach_lora(base, 4, 8, 7, kDefaultLoraTargets);
  EXPECT_THROW(merge_adapters(q, false), lrlm::ConfigError);
  EXPECT_NO_THROW(merge_adapters(q, true));
  EXPECT_EQ(m.trainable_count(), 2u * 2u * (4u * 32u));
}

TEST(Methods, QuantizeModel) {
  Model<float> base(tiny(), {}, 2);
  const MatrixId targets[] = {MatrixId::kU, MatrixId::kH};
  auto q = quantize_model(base, 8, targets);
  EXPECT_EQ(q.linear(1, MatrixId::kU).kind(), LinearKind::kQuantized);
  EXPECT_EQ(q.head().kind(), LinearKind::kQuantized);
  EXPECT_EQ(q.linear(1, MatrixId::kD).kind(), LinearKind::kDense);
  auto t = tokens(6, 32, 3);
  EXPECT_LE(lrlm::linalg::max_abs_diff(q.forward(t).logits, base.forward(t).logits), 0.05);
  EXPECT_THROW(quantize_model(base, 5, targets), lrlm::ConfigError);
}

TEST(Data, TokenizerAndEntropy) {
  const std::string s = "ab\xff";
  auto t = byte_tokenize(s);
  EXPECT_EQ(t, (std::vector<int>{97, 98, 255}));
  t.push_back(kEosToken);
  EXPECT_EQ(detokenize(t), s);
  std::vector<int> u{1, 1, 2, 2};
  EXPECT_NEAR(unigram_entropy(u), std::log(2.0), 1e-15);
  std::vector<int> one{5, 5, 5};
  EXPECT_EQ(unigram_entropy(one), 0.0);
}

TEST(Data, SamplerIsReproducibleAndShifted) {
  auto toks = tokens(50, 32, 1);
  BatchSampler a(toks, 3, 10, 9), b(toks, 3, 10, 9);
  for (int i = 0; i < 4; ++i) {
    auto x = a.next();
    auto y = b.next();
    EXPECT_EQ(x.offsets, y.offsets);
    for (std::size_t w = 0; w < 3; ++w) {
      EXPECT_LE(x.offsets[w], 40u);
      for (std::size_t j = 0; j < 10; ++j) {
        EXPECT_EQ(x.inputs[w][j], toks[x.offsets[w] + j]);
        EXPECT_EQ(x.targets[w][j], toks[x.offsets[w] + j + 1]);
      }
    }
  }
  EXPECT_THROW(BatchSampler(tokens(10, 32, 1), 1, 10, 0), lrlm::ConfigError);
}

}  // namespace
