// Copyright (C) 2026 The lrlm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lrlm/transformer/linear.hpp"

namespace lrlm::trainer {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  /// Throws ConfigError unless 0 < beta < 1, lr > 0, eps > 0, weight_decay >= 0.
  void validate() const;
};

/// Decoupled-weight-decay Adam with bias correction:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   w <- w - lr (m^ / (sqrt(v^) + eps) + wd w)
/// The update runs on a 64-bit master copy; the working tensor receives the
/// rounded result.
class AdamWState {
 public:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::vector<double> master;
  };

  /// Updates every trainable tensor in params. A non-finite gradient throws
  /// NumericError naming the tensor before anything is modified; a trainable
  /// tensor without a gradient throws ConfigError.
  template <typename T>
  void step(std::vector<transformer::ParamRef<T>>& params, const transformer::Gradients<T>& grads,
            const AdamWConfig& cfg);

  std::size_t steps() const noexcept { return steps_; }
  const std::map<std::string, Slot>& slots() const noexcept { return slots_; }

  /// Bytes of optimizer state (m, v, master) currently held.
  std::size_t state_bytes() const;

 private:
  std::size_t steps_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace lrlm::trainer
