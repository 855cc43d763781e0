// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#include "lrlm/trainer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lrlm/common/error.hpp"
#include "lrlm/transformer/ops.hpp"

namespace lrlm::trainer {

using transformer::Gradients;
using transformer::Model;

transformer::Gradients<double> analytic_gradients(const Model<double>& model, std::span<const int> inputs,
                                                  std::span<const int> targets,
                                                  const transformer::RecomputePolicy& policy) {
  auto fwd = model.forward(inputs, policy);
  linalg::Grid<double> dlogits;
  transformer::cross_entropy_with_grad(fwd.logits, targets, dlogits);
  return model.backward(fwd.tape, dlogits);
}

GradCheckReport compare_gradients(Model<double>& model, std::span<const int> inputs, std::span<const int> targets,
                                  const Gradients<double>& analytic, const GradCheckOptions& opts) {
  auto loss = [&] {
    return transformer::cross_entropy_loss(model.forward(inputs, transformer::RecomputePolicy::per_layer()).logits, targets);
  };
  GradCheckReport rep;
  for (auto& p : model.parameters()) {
    if (!p.trainable) continue;
    const auto it = analytic.find(p.name);
    if (it == analytic.end()) throw ConfigError("grad_check: no analytic gradient for " + p.name);
    const std::size_t count = p.value->size();
    const std::size_t stride = opts.entries_per_tensor == 0 ? 1 : std::max<std::size_t>(1, count / opts.entries_per_tensor);
    for (std::size_t i = 0; i < count; i += stride) {
      double& w = p.value->data()[i];
      const double saved = w;
      w = saved + opts.step;
      const double up = loss();
      w = saved - opts.step;
      const double down = loss();
      w = saved;
      const double fd = (up - down) / (2.0 * opts.step);
      const double an = it->second.data()[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), opts.floor});
      ++rep.checked;
      if (rel > rep.max_rel_error || rep.worst.empty()) {
        if (rel >= rep.max_rel_error) {
          rep.max_rel_error = rel;
          rep.worst = p.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  rep.passed = rep.max_rel_error <= opts.tol;
  return rep;
}

template <typename T>
GradCheckReport grad_check(const Model<T>& model, std::span<const int> inputs, std::span<const int> targets,
                           const GradCheckOptions& opts) {
  Model<double> m = model.template cast<double>();
  const auto grads = analytic_gradients(m, inputs, targets);
  return compare_gradients(m, inputs, targets, grads, opts);
}

template GradCheckReport grad_check(const Model<float>&, std::span<const int>, std::span<const int>, const GradCheckOptions&);
template GradCheckReport grad_check(const Model<double>&, std::span<const int>, std::span<const int>, const GradCheckOptions&);

}  // namespace lrlm::trainer
