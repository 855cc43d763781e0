// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrlm/cli/cli.hpp"
#include "lrlm/io/checkpoint.hpp"
#include "lrlm/io/config.hpp"
#include "lrlm/linalg/grid.hpp"

namespace {

namespace fs = std::filesystem;
using lrlm::io::Json;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lrlm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return lrlm::cli::run(args, out_, err_);
  }
  std::string rd(const char* name) const { return (dir_ / name).string(); }
  Json report(const char* name) const {
    std::ifstream in(dir_ / name / "report.json");
    return Json::parse(in);
  }
  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, PlanParamsTable) {
  const auto t0 = std::chrono::steady_clock::now();
  ASSERT_EQ(run({"--run-dir", rd("p"), "plan", "params", "--preset", "llama2-7b"}), 0) << err_.str();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 1.0);
  const std::string o = out_.str();
  EXPECT_NE(o.find("W^Q        4096 x 4096            536.87          1.07            7.97"), std::string::npos) << o;
  EXPECT_NE(o.find("6738415616"), std::string::npos);
  const auto r = report("p");
  EXPECT_EQ(r["command"], "plan params");
  EXPECT_EQ(r["result"]["total"], 6738415616ull);
}

TEST_F(Cli, PlanWithoutTensorAllocation) {
  const auto before = lrlm::linalg::allocation_stats();
  ASSERT_EQ(run({"--run-dir", rd("a"), "plan", "mem", "--preset", "llama2-70b", "--batch", "16", "--seq", "4096"}), 0);
  ASSERT_EQ(run({"--run-dir", rd("b"), "plan", "params", "--preset", "llama2-70b", "--lowrank", "512"}), 0);
  ASSERT_EQ(run({"--run-dir", rd("c"), "plan", "shard", "--preset", "llama2-70b", "--gpus", "8"}), 0);
  ASSERT_EQ(run({"--run-dir", rd("d"), "plan", "flops", "--preset", "llama2-70b", "--no-cache"}), 0);
  const auto after = lrlm::linalg::allocation_stats();
  EXPECT_EQ(after.grids, before.grids);
  EXPECT_EQ(after.bytes, before.bytes);
}

TEST_F(Cli, PlanNumbers) {
  ASSERT_EQ(run({"--run-dir", rd("m"), "plan", "mem", "--preset", "llama2-7b", "--batch", "1", "--seq", "4096"}), 0);
  auto r = report("m")["result"];
  EXPECT_DOUBLE_EQ(r["params_GB"].get<double>(), 14.0);
  EXPECT_DOUBLE_EQ(r["optimizer_GB"].get<double>(), 84.0);
  EXPECT_NEAR(r["intermediates_GB"].get<double>(), 81.0, 0.01);

  ASSERT_EQ(run({"--run-dir", rd("s"), "plan", "shard", "--preset", "llama2-70b", "--gpus", "8"}), 0);
  EXPECT_NE(out_.str().find("262.5"), std::string::npos) << out_.str();
  ASSERT_EQ(run({"--run-dir", rd("pp"), "plan", "pipeline", "--stages", "4", "--micro", "1"}), 0);
  EXPECT_DOUBLE_EQ(report("pp")["result"]["utilization"].get<double>(), 0.25);
  ASSERT_EQ(run({"--run-dir", rd("f"), "plan", "flops", "--preset", "llama2-7b", "--in", "100", "--gen", "100",
                 "--no-cache", "--profile", "phone"}), 0);
  EXPECT_EQ(report("f")["result"]["token_passes"], 14950);
  ASSERT_EQ(run({"--run-dir", rd("fed"), "plan", "federated", "--nodes", "4", "--model-gb", "14"}), 0);
  EXPECT_DOUBLE_EQ(report("fed")["result"]["center_per_iter_bytes"].get<double>(), 84e9);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({"--run-dir", rd("x"), "plan", "params", "--preset", "llama9"}), lrlm::cli::kExitConfig);
  EXPECT_NE(err_.str().find("llama9"), std::string::npos);
  EXPECT_EQ(run({"plan", "params", "--bogus"}), lrlm::cli::kExitConfig);
  EXPECT_EQ(run({"--run-dir", rd("x"), "plan", "mem", "--policy", "sometimes"}), lrlm::cli::kExitConfig);
  EXPECT_EQ(run({"--run-dir", rd("x"), "infer", "--in", rd("nothing.lrlm")}), lrlm::cli::kExitConfig);
  EXPECT_EQ(run({"--run-dir", rd("x"), "--preset", "toy", "pretrain", "--steps", "2", "--lr", "1e30"}),
            lrlm::cli::kExitNumeric);
  EXPECT_NE(err_.str().find("non-finite"), std::string::npos) << err_.str();
  EXPECT_EQ(run({"--help"}), lrlm::cli::kExitOk);
  EXPECT_NE(out_.str().find("plan"), std::string::npos);
}

TEST_F(Cli, ReportsAreDeterministic) {
  ASSERT_EQ(run({"--run-dir", rd("a"), "--seed", "5", "--preset", "toy", "pretrain", "--steps", "3"}), 0) << err_.str();
  ASSERT_EQ(run({"--run-dir", rd("b"), "--seed", "5", "--preset", "toy", "pretrain", "--steps", "3"}), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "report.json"), slurp(dir_ / "b" / "report.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "model.lrlm"), slurp(dir_ / "b" / "model.lrlm"));
  EXPECT_EQ(report("a")["config"]["train"]["steps"], 3);
  ASSERT_EQ(run({"--run-dir", rd("c"), "--seed", "6", "--preset", "toy", "pretrain", "--steps", "3"}), 0);
  EXPECT_NE(slurp(dir_ / "a" / "metrics.csv"), slurp(dir_ / "c" / "metrics.csv"));
}

TEST_F(Cli, TimestampedRunDirectory) {
  ASSERT_EQ(run({"--runs-root", rd("runs"), "--seed", "11", "plan", "pipeline"}), 0);
  std::vector<fs::path> dirs(fs::directory_iterator(dir_ / "runs"), fs::directory_iterator{});
  ASSERT_EQ(dirs.size(), 1u);
  const std::string name = dirs[0].filename().string();
  EXPECT_EQ(name.substr(name.size() - 3), "-11");
  EXPECT_TRUE(fs::exists(dirs[0] / "report.json"));
}

TEST_F(Cli, CheckpointPipeline) {
  ASSERT_EQ(run({"--run-dir", rd("pre"), "--preset", "toy", "pretrain", "--steps", "2"}), 0) << err_.str();
  const std::string model = (dir_ / "pre" / "model.lrlm").string();
  ASSERT_EQ(run({"--run-dir", rd("dec"), "decompose", "--in", model, "--rank", "16", "--workers", "2"}), 0) << err_.str();
  ASSERT_EQ(run({"--run-dir", rd("q"), "quantize", "--in", model, "--bits", "4"}), 0) << err_.str();
  const std::string qmodel = (dir_ / "q" / "model.lrlm").string();
  EXPECT_EQ(lrlm::io::inspect_checkpoint(qmodel).tensors.at("layers.0.wq.weight").dtype, "u4q");
  ASSERT_EQ(run({"--run-dir", rd("i1"), "infer", "--in", qmodel, "--prompt", "hello", "--tokens", "6"}), 0) << err_.str();
  ASSERT_EQ(run({"--run-dir", rd("i2"), "infer", "--in", qmodel, "--prompt", "hello", "--tokens", "6", "--no-cache"}), 0);
  EXPECT_EQ(report("i1")["result"]["tokens"], report("i2")["result"]["tokens"]);
  ASSERT_EQ(run({"--run-dir", rd("ft"), "finetune", "--in", model, "--rank", "4", "--steps", "2", "--base-bits", "8"}), 0)
      << err_.str();
  const std::string ft = (dir_ / "ft" / "model.lrlm").string();
  EXPECT_EQ(run({"--run-dir", rd("m1"), "merge", "--in", ft}), lrlm::cli::kExitConfig);
  ASSERT_EQ(run({"--run-dir", rd("m2"), "merge", "--in", ft, "--dequantize"}), 0) << err_.str();
}

TEST_F(Cli, GradCheckAllKinds) {
  ASSERT_EQ(run({"--run-dir", rd("g"), "gradcheck", "--kind", "all"}), 0) << err_.str();
  for (const auto& k : report("g")["result"]["checks"]) EXPECT_TRUE(k["passed"].get<bool>()) << k.dump();
}

}  // namespace
