// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/lowrank/decompose.hpp"

#include <exception>
#include <memory>
#include <string>
#include <utility>

#include "lrlm/common/error.hpp"
#include "lrlm/common/parallel.hpp"

namespace lrlm::lowrank {

using transformer::LinearLayer;
using transformer::LowRankLinear;
using transformer::MatrixId;

template <typename T>
transformer::Model<T> decompose_model(const transformer::Model<T>& model, std::size_t rank, std::size_t workers,
                                      const std::vector<MatrixId>& targets) {
  if (targets.empty()) throw ConfigError("decompose_model: no target matrices");
  for (MatrixId id : targets) {
    if (id == MatrixId::kE) throw ConfigError("decompose_model: the embedding stays dense in executable models");
  }
  struct Job {
    std::size_t layer;
    MatrixId id;
  };
  std::vector<Job> jobs;
  for (MatrixId id : targets) {
    if (id == MatrixId::kH) {
      jobs.push_back({0, id});
      continue;
    }
    for (std::size_t l = 0; l < model.config().layers; ++l) jobs.push_back({l, id});
  }

  std::vector<std::unique_ptr<LinearLayer<T>>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  parallel_for(jobs.size(), workers == 0 ? 1 : workers, [&](std::size_t i) {
    const LinearLayer<T>& src = model.linear(jobs[i].layer, jobs[i].id);
    try {
      transformer::LayerSpec target;
      target.kind = transformer::LinearKind::kLowRank;
      target.rank = rank;
      target.validate(src.fan_out(), src.fan_in(), src.name());
      results[i] = std::make_unique<LowRankLinear<T>>(src.name(), decompose_linear(src.effective_weight(), rank));
    } catch (const NumericError& e) {
      errors[i] = std::make_exception_ptr(NumericError(src.name(), e.what()));
    } catch (const Error& e) {
      errors[i] = std::make_exception_ptr(ConfigError(src.name() + ": " + e.what()));
    }
  });
  // Report the first failure in job order, independent of scheduling.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  transformer::Model<T> out = model;
  for (std::size_t i = 0; i < jobs.size(); ++i) out.replace(jobs[i].layer, jobs[i].id, std::move(results[i]));
  return out;
}

template transformer::Model<float> decompose_model(const transformer::Model<float>&, std::size_t, std::size_t,
                                                   const std::vector<MatrixId>&);
template transformer::Model<double> decompose_model(const transformer::Model<double>&, std::size_t, std::size_t,
                                                    const std::vector<MatrixId>&);

}  // namespace lrlm::lowrank
