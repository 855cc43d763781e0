// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "lrlm/transformer/model.hpp"

namespace lrlm::trainer {

struct GradCheckOptions {
  // Embedding rows start near 0.02 in scale and RMSNorm curvature grows like
  // 1/|x|, so the step must stay well below the row norm.
  double step = 1e-5;
  double tol = 1e-3;
  /// Entries probed per tensor, evenly spaced; 0 probes every entry.
  std::size_t entries_per_tensor = 16;
  /// Relative error is |fd - g| / max(|fd|, |g|, floor).
  double floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  std::size_t checked = 0;
  bool passed = false;
};

/// Loss gradients of a 64-bit model on one window.
transformer::Gradients<double> analytic_gradients(const transformer::Model<double>& model, std::span<const int> inputs,
                                                  std::span<const int> targets,
                                                  const transformer::RecomputePolicy& policy = {});

/// Central differences of the 64-bit loss against `analytic` for every trainable tensor.
GradCheckReport compare_gradients(transformer::Model<double>& model, std::span<const int> inputs,
                                  std::span<const int> targets, const transformer::Gradients<double>& analytic,
                                  const GradCheckOptions& opts = {});

/// Converts the model to 64-bit and checks its analytic gradients.
template <typename T>
GradCheckReport grad_check(const transformer::Model<T>& model, std::span<const int> inputs, std::span<const int> targets,
                           const GradCheckOptions& opts = {});

}  // namespace lrlm::trainer
